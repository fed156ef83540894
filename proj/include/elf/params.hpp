#ifndef ELF_PARAMS_HPP
#define ELF_PARAMS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace elf {

enum class Init { FanInUniform, Zeros, Ones };

// Uniform in [0, 1) from the top 53 bits, independent of the standard
// library's distribution implementations.
inline double unit_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * unit_uniform(rng);
}

// Named parameter tensors in registration order. Names are hierarchical
// ("idn.rtb.block0.attn.proj.weight") and unique.
template <class T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
        Init init;
        std::size_t fan_in;
    };

    explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

    Tensor<T> add(const std::string& name, Shape shape, Init init, std::size_t fan_in = 1) {
        if (index_.count(name)) throw Error("duplicate parameter name: " + name);
        Tensor<T> t(std::move(shape));
        fill(t, init, fan_in);
        t.set_requires_grad(true);
        index_[name] = entries_.size();
        entries_.push_back({name, t, init, fan_in});
        return t;
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    Tensor<T> get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("unknown parameter: " + name);
        return entries_[it->second].tensor;
    }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.tensor.size();
        return n;
    }

    // Scalar count of every parameter whose name starts with `prefix`.
    std::size_t count(const std::string& prefix) const {
        std::size_t n = 0;
        for (const auto& e : entries_)
            if (e.name.compare(0, prefix.size(), prefix) == 0) n += e.tensor.size();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

    // Overwrites every parameter (zero-initialised ones included) with
    // U(-a, a) noise. Used by the gradient checker so that no path is dead.
    void randomize(std::uint64_t seed, double a = 0.5) {
        std::mt19937_64 rng(seed);
        for (auto& e : entries_)
            for (auto& v : e.tensor.mutable_data()) v = static_cast<T>(uniform(rng, -a, a));
    }

    template <class U>
    void copy_values_from(const ParamStore<U>& other) {
        if (other.size() != size()) throw Error("copy_values_from: parameter sets differ");
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            const auto& src = other.entries()[i];
            auto& dst = entries_[i];
            if (src.name != dst.name || src.tensor.shape() != dst.tensor.shape())
                throw Error("copy_values_from: mismatch at " + dst.name);
            auto& d = dst.tensor.mutable_data();
            for (std::size_t k = 0; k < d.size(); ++k) d[k] = static_cast<T>(src.tensor.data()[k]);
        }
    }

private:
    void fill(Tensor<T>& t, Init init, std::size_t fan_in) {
        auto& d = t.mutable_data();
        switch (init) {
            case Init::Zeros: std::fill(d.begin(), d.end(), T(0)); break;
            case Init::Ones: std::fill(d.begin(), d.end(), T(1)); break;
            case Init::FanInUniform: {
                const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
                for (auto& v : d) v = static_cast<T>(uniform(rng_, -bound, bound));
                break;
            }
        }
    }

    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
    std::mt19937_64 rng_;
};

}  // namespace elf

#endif  // ELF_PARAMS_HPP
