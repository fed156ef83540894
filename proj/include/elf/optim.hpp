#ifndef ELF_OPTIM_HPP
#define ELF_OPTIM_HPP

#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "params.hpp"

namespace elf {

struct AdamOptions {
    double base_lr = 2e-4;
    double decay = 0.8;
    std::size_t decay_every = 65;  // epochs
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

namespace detail {

// Shortest decimal that round-trips to x, as an exact fraction num/den with
// both terms below 2^63. Empty if x is negative or the terms do not fit.
inline std::optional<std::pair<unsigned __int128, unsigned __int128>> decimal_fraction(double x) {
    if (!(x >= 0)) return std::nullopt;
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    std::string_view s(buf, static_cast<std::size_t>(res.ptr - buf));
    int exp10 = 0;
    if (const auto e = s.find('e'); e != std::string_view::npos) {
        exp10 = std::stoi(std::string(s.substr(e + 1)));
        s = s.substr(0, e);
    }
    unsigned __int128 num = 0, den = 1;
    const unsigned __int128 cap = static_cast<unsigned __int128>(1) << 63;
    bool frac = false;
    for (char c : s) {
        if (c == '.') {
            frac = true;
            continue;
        }
        num = num * 10 + static_cast<unsigned>(c - '0');
        if (frac) --exp10;
        if (num >= cap) return std::nullopt;
    }
    for (; exp10 > 0; --exp10)
        if ((num *= 10) >= cap) return std::nullopt;
    for (; exp10 < 0; ++exp10)
        if ((den *= 10) >= cap) return std::nullopt;
    return std::pair{num, den};
}

}  // namespace detail

// Step decay: base_lr * decay^floor(epoch / decay_every), evaluated on the
// decimal values as written (0.8, not its binary neighbour) with exact
// integer powers and a single final division. Falls back to extended
// precision when the integers would overflow.
inline double learning_rate(const AdamOptions& o, std::size_t epoch) {
    if (o.decay_every == 0) return o.base_lr;
    const std::size_t k = epoch / o.decay_every;
    const auto b = detail::decimal_fraction(o.base_lr), d = detail::decimal_fraction(o.decay);
    if (b && d) {
        const unsigned __int128 cap = static_cast<unsigned __int128>(1) << 126;
        unsigned __int128 num = b->first, den = b->second;
        std::size_t i = 0;
        for (; i < k; ++i) {
            if ((d->first && num > cap / d->first) || den > cap / d->second) break;
            num *= d->first;
            den *= d->second;
        }
        if (i == k) return static_cast<double>(static_cast<long double>(num) / static_cast<long double>(den));
    }
    long double r = o.base_lr;
    for (std::size_t i = 0; i < k; ++i) r *= o.decay;
    return static_cast<double>(r);
}

template <class T>
class Adam {
public:
    explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

    const AdamOptions& options() const { return opts_; }
    std::uint64_t step_count() const { return step_; }

    // Moment buffers, aligned with the store's entry order.
    std::vector<std::vector<T>>& first_moments() { return m_; }
    std::vector<std::vector<T>>& second_moments() { return v_; }
    const std::vector<std::vector<T>>& first_moments() const { return m_; }
    const std::vector<std::vector<T>>& second_moments() const { return v_; }
    void set_step_count(std::uint64_t s) { step_ = s; }

    void bind(const ParamStore<T>& ps) {
        if (m_.size() == ps.size()) return;
        m_.clear();
        v_.clear();
        for (const auto& e : ps.entries()) {
            m_.emplace_back(e.tensor.size(), T(0));
            v_.emplace_back(e.tensor.size(), T(0));
        }
    }

    // One bias-corrected update with the scheduled rate for `epoch`.
    // Parameters that received no gradient are treated as having gradient 0.
    void step(ParamStore<T>& ps, std::size_t epoch) {
        bind(ps);
        for (const auto& e : ps.entries())
            if (e.tensor.has_grad())
                for (T g : e.tensor.grad())
                    if (!std::isfinite(g)) throw Error("adam: non-finite gradient in parameter " + e.name);
        ++step_;
        const double lr = learning_rate(opts_, epoch);
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
        const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
        for (std::size_t i = 0; i < ps.size(); ++i) {
            auto t = ps.entries()[i].tensor;
            auto& p = t.mutable_data();
            const bool has = t.has_grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t k = 0; k < p.size(); ++k) {
                const T g = has ? t.grad()[k] : T(0);
                m[k] = b1 * m[k] + (T(1) - b1) * g;
                v[k] = b2 * v[k] + (T(1) - b2) * g * g;
                const double mhat = static_cast<double>(m[k]) / bc1;
                const double vhat = static_cast<double>(v[k]) / bc2;
                p[k] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + opts_.eps));
            }
        }
    }

private:
    AdamOptions opts_;
    std::uint64_t step_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

}  // namespace elf

#endif  // ELF_OPTIM_HPP
