#ifndef ELF_GRADCHECK_HPP
#define ELF_GRADCHECK_HPP

// Finite-difference gradient checks in double precision. Each scope builds
// one layer (or the whole model) with random parameters, reduces its output
// to a scalar against a fixed random projection, and compares analytic
// gradients with central differences for sampled entries of every parameter
// tensor and of the input.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "blocks.hpp"
#include "metrics.hpp"
#include "model.hpp"

namespace elf {

inline constexpr double kLayerTolerance = 1e-4;
inline constexpr double kComposedTolerance = 1e-3;

struct GradcheckOptions {
    double h = 1e-4;
    std::size_t samples = 24;  // entries per tensor (all if fewer)
    double floor = 1e-7;       // denominator floor: gradients below it are compared absolutely
    std::uint64_t seed = 1;
};

struct GradcheckEntry {
    std::string scope;
    std::string param;
    std::size_t checked = 0;
    std::size_t straddled = 0;  // samples skipped because x +- h crosses a ReLU/clamp kink
    double max_rel_err = 0;
    double tolerance = 0;
    bool pass = false;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;
    double seconds = 0;

    bool pass() const {
        return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.pass; });
    }
    double max_rel_err(const std::string& scope = {}) const {
        double m = 0;
        for (const auto& e : entries)
            if (scope.empty() || e.scope == scope) m = std::max(m, e.max_rel_err);
        return m;
    }
    void append(const GradcheckReport& o) {
        entries.insert(entries.end(), o.entries.begin(), o.entries.end());
        seconds += o.seconds;
    }
};

inline double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

using Wrt = std::vector<std::pair<std::string, Tensor<double>>>;

// `loss` must rebuild the graph from the current values of the tensors in
// `wrt` and return a scalar.
inline GradcheckReport check_gradients(const std::string& scope, const std::function<Tensor<double>()>& loss,
                                       const Wrt& wrt, double tolerance, const GradcheckOptions& o = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    auto& tape = Tape<double>::current();
    tape.clear();
    for (auto [name, t] : wrt) {
        t.zero_grad();
        t.set_requires_grad(true);
    }
    {
        auto l = loss();
        backward(l);
    }
    std::vector<std::vector<double>> analytic;
    for (const auto& [name, t] : wrt)
        analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.size(), 0.0));
    tape.clear();

    // Loss value plus the hash of every ReLU/clamp branch taken.
    auto& branches = detail::BranchMonitor::current();
    auto eval = [&] {
        NoGradGuard<double> guard;
        branches.hash = detail::BranchMonitor{}.hash;
        branches.enabled = true;
        const double v = loss().item();
        branches.enabled = false;
        return std::pair{v, branches.hash};
    };
    GradcheckReport rep;
    std::mt19937_64 rng(o.seed);
    for (std::size_t k = 0; k < wrt.size(); ++k) {
        auto t = wrt[k].second;
        // entries in random order; the first `samples` smooth ones are checked
        std::vector<std::size_t> idx(t.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        for (std::size_t i = 0; i + 1 < idx.size(); ++i)
            std::swap(idx[i], idx[i + static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(idx.size() - i))]);
        GradcheckEntry e{scope, wrt[k].first, 0, 0, 0.0, tolerance, false};
        auto& d = t.mutable_data();
        const auto base = eval().second;
        for (std::size_t i : idx) {
            if (e.checked == o.samples) break;
            const double v = d[i];
            d[i] = v + o.h;
            const auto [up, hash_up] = eval();
            d[i] = v - o.h;
            const auto [dn, hash_dn] = eval();
            d[i] = v;
            if (hash_up != base || hash_dn != base) {
                ++e.straddled;
                continue;
            }
            ++e.checked;
            const double numeric = (up - dn) / (2 * o.h);
            e.max_rel_err = std::max(e.max_rel_err, relative_error(analytic[k][i], numeric, o.floor));
        }
        // a tensor with no smooth sample left cannot pass
        e.pass = e.checked > 0 && e.max_rel_err < tolerance;
        rep.entries.push_back(std::move(e));
    }
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

namespace detail {

inline Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.mutable_data()) v = uniform(rng, lo, hi);
    return t;
}

// sum(y * R) for a fixed random R; R is drawn once per shape.
struct Projection {
    std::mt19937_64 rng;
    Tensor<double> r;
    Tensor<double> operator()(const Tensor<double>& y) {
        if (!r.defined() || r.shape() != y.shape()) r = random_tensor(y.shape(), rng);
        return sum(mul(y, r));
    }
};

inline Wrt with_params(const ParamStore<double>& ps, Wrt extra) {
    for (const auto& e : ps.entries()) extra.emplace_back(e.name, e.tensor);
    return extra;
}

template <class Layer>
GradcheckReport check_unary(const std::string& scope, ParamStore<double>& ps, const Layer& layer, Shape in,
                            double tol, const GradcheckOptions& o, double lo = -1, double hi = 1) {
    ps.randomize(o.seed + 11);
    std::mt19937_64 rng(o.seed + 17);
    auto x = random_tensor(std::move(in), rng, lo, hi);
    auto proj = std::make_shared<Projection>(Projection{std::mt19937_64(o.seed + 23), {}});
    return check_gradients(scope, [&layer, x, proj] { return (*proj)(layer(x)); }, with_params(ps, {{"input", x}}),
                           tol, o);
}

}  // namespace detail

inline const std::vector<std::string>& gradcheck_scopes() {
    static const std::vector<std::string> s = {
        "conv2d", "dsconv", "channel_attention", "rcab", "layer_norm", "transposed_attention", "feed_forward",
        "bilinear", "softmax", "matmul", "hfb", "transformer_block", "rtb", "edb", "mam", "ssim", "loss", "elf"};
    return s;
}

// Runs one named scope, or every scope for "all". Throws on unknown names.
inline GradcheckReport gradcheck(const std::string& scope, GradcheckOptions o = {}) {
    using T = double;
    if (scope == "all") {
        GradcheckReport all;
        for (const auto& s : gradcheck_scopes()) all.append(gradcheck(s, o));
        return all;
    }
    const auto cfg = [] {
        auto c = ModelConfig::desk();
        return c;
    }();
    ParamStore<T> ps(o.seed);
    if (scope == "conv2d") {
        // strided, grouped, asymmetric-padding conv plus a plain 3x3
        auto w = ps.add("strided.weight", Shape{4, 2, 3, 2}, Init::FanInUniform, 12);
        auto b = ps.add("strided.bias", Shape{4}, Init::FanInUniform, 12);
        Conv<T> plain(ps, "plain", 4, 3, 3);
        Conv2dOptions opt{2, 1, 0, 2};
        auto f = [&](const Tensor<T>& x) { return plain(conv2d(x, w, b, opt)); };
        return detail::check_unary(scope, ps, f, Shape{2, 4, 9, 8}, kLayerTolerance, o);
    }
    if (scope == "dsconv") {
        DSConv<T> l(ps, "dsconv", 4, 6, 3);
        return detail::check_unary(scope, ps, l, Shape{2, 4, 6, 6}, kLayerTolerance, o);
    }
    if (scope == "channel_attention") {
        ChannelAttention<T> l(ps, "ca", 8, 4);
        return detail::check_unary(scope, ps, l, Shape{2, 8, 5, 5}, kLayerTolerance, o);
    }
    if (scope == "rcab") {
        RCAB<T> a(ps, "rcab_dsc", 8, 4, true), b(ps, "rcab", 8, 4, false);
        auto f = [&](const Tensor<T>& x) { return b(a(x)); };
        return detail::check_unary(scope, ps, f, Shape{1, 8, 6, 6}, kLayerTolerance, o);
    }
    if (scope == "layer_norm") {
        LayerNormChannel<T> l(ps, "ln", 6);
        return detail::check_unary(scope, ps, l, Shape{2, 6, 4, 4}, kLayerTolerance, o);
    }
    if (scope == "transposed_attention") {
        TransposedAttention<T> l(ps, "attn", 8, 2);
        auto f = [&](const Tensor<T>& x) { return l(x, x, x); };
        return detail::check_unary(scope, ps, f, Shape{1, 8, 6, 6}, kLayerTolerance, o);
    }
    if (scope == "feed_forward") {
        FeedForward<T> l(ps, "ffn", 6, 2);
        return detail::check_unary(scope, ps, l, Shape{1, 6, 5, 5}, kLayerTolerance, o);
    }
    if (scope == "bilinear") {
        auto f = [](const Tensor<T>& x) { return bilinear_resize(bilinear_scale(x, 1, 2), 7, 11); };
        return detail::check_unary(scope, ps, f, Shape{1, 2, 8, 6}, kLayerTolerance, o);
    }
    if (scope == "softmax") {
        auto f = [](const Tensor<T>& x) { return softmax(scale(x, T(3)), 2); };
        return detail::check_unary(scope, ps, f, Shape{2, 3, 5}, kLayerTolerance, o);
    }
    if (scope == "matmul") {
        std::mt19937_64 rng(o.seed + 5);
        auto a = detail::random_tensor(Shape{2, 3, 4}, rng), b = detail::random_tensor(Shape{1, 4, 5}, rng);
        auto proj = std::make_shared<detail::Projection>(detail::Projection{std::mt19937_64(o.seed + 7), {}});
        return check_gradients(scope, [a, b, proj] { return (*proj)(matmul(a, b)); }, {{"a", a}, {"b", b}},
                               kLayerTolerance, o);
    }
    if (scope == "hfb") {
        HybridFusion<T> l(ps, "hfb", 8, 2, 4);
        ps.randomize(o.seed + 11);
        std::mt19937_64 rng(o.seed + 3);
        auto a = detail::random_tensor(Shape{1, 8, 6, 6}, rng), b = detail::random_tensor(Shape{1, 8, 6, 6}, rng);
        auto proj = std::make_shared<detail::Projection>(detail::Projection{std::mt19937_64(o.seed + 7), {}});
        return check_gradients(scope, [&l, a, b, proj] { return (*proj)(l({a, b})); },
                               detail::with_params(ps, {{"input.a", a}, {"input.b", b}}), kLayerTolerance, o);
    }
    if (scope == "transformer_block") {
        TransformerBlock<T> l(ps, "block", 8, 2, 2);
        return detail::check_unary(scope, ps, l, Shape{1, 8, 6, 6}, kComposedTolerance, o);
    }
    if (scope == "rtb") {
        ResidualTransformerBranch<T> l(ps, "rtb", cfg);
        return detail::check_unary(scope, ps, l, Shape{1, 8, 6, 6}, kComposedTolerance, o);
    }
    if (scope == "edb") {
        EncoderDecoderBranch<T> l(ps, "edb", cfg);
        o.samples = std::min<std::size_t>(o.samples, 8);
        return detail::check_unary(scope, ps, l, Shape{1, 8, 8, 8}, kComposedTolerance, o);
    }
    if (scope == "mam") {
        MultiInputAttention<T> l(ps, "mam", cfg);
        ps.randomize(o.seed + 11);
        std::mt19937_64 rng(o.seed + 3);
        auto rain = detail::random_tensor(Shape{1, 3, 6, 6}, rng);
        auto rainy = detail::random_tensor(Shape{1, 3, 12, 12}, rng, 0, 1);
        auto der = detail::random_tensor(Shape{1, 3, 6, 6}, rng, 0, 1);
        auto proj = std::make_shared<detail::Projection>(detail::Projection{std::mt19937_64(o.seed + 7), {}});
        return check_gradients(scope, [&l, rain, rainy, der, proj] { return (*proj)(l(rain, rainy, der)); },
                               detail::with_params(ps, {{"rain_pred", rain}, {"rainy", rainy}, {"derained_sub", der}}),
                               kComposedTolerance, o);
    }
    if (scope == "ssim") {
        std::mt19937_64 rng(o.seed + 3);
        auto a = detail::random_tensor(Shape{1, 3, 13, 14}, rng, 0, 1), b = detail::random_tensor(Shape{1, 3, 13, 14}, rng, 0, 1);
        return check_gradients(scope, [a, b] { return ssim(a, b); }, {{"a", a}, {"b", b}}, kComposedTolerance, o);
    }
    if (scope == "loss") {
        std::mt19937_64 rng(o.seed + 3);
        auto pred = detail::random_tensor(Shape{1, 3, 12, 12}, rng, 0, 1), clean = detail::random_tensor(Shape{1, 3, 12, 12}, rng, 0, 1);
        const auto eps = static_cast<T>(cfg.epsilon), alpha = static_cast<T>(cfg.alpha);
        return check_gradients(
            scope, [=] { return add(charbonnier(pred, clean, eps), scale(ssim(pred, clean), alpha)); },
            {{"prediction", pred}}, kComposedTolerance, o);
    }
    if (scope == "elf") {
        // The joint training loss of the full desk model.
        ElfModel<T> model(cfg, o.seed);
        model.params().randomize(o.seed + 11, 0.25);
        std::mt19937_64 rng(o.seed + 3);
        auto rainy = detail::random_tensor(Shape{1, 3, 24, 24}, rng, 0, 1);
        auto clean = detail::random_tensor(Shape{1, 3, 24, 24}, rng, 0, 1);
        o.samples = std::min<std::size_t>(o.samples, 4);
        return check_gradients(scope, [&model, rainy, clean] {
            return loss_joint(model.forward(rainy), clean, model.config()).total;
        }, detail::with_params(model.params(), {{"rainy", rainy}}), kComposedTolerance, o);
    }
    throw Error("gradcheck: unknown scope '" + scope + "'");
}

// x^2 with a deliberately wrong derivative (2.2x): the checker must flag it.
inline GradcheckReport gradcheck_negative_control(const GradcheckOptions& o = {}) {
    std::mt19937_64 rng(o.seed);
    auto x = detail::random_tensor(Shape{3, 4}, rng);
    auto f = [x] {
        Tensor<double> y(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) y.mutable_data()[i] = x[i] * x[i];
        auto xi = x.impl();
        auto out = make_op<double>(y, {&x}, [xi](const std::vector<double>& g) {
            auto* gx = detail::grad_sink(xi);
            if (!gx) return;
            for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * 2.2 * xi->data[i];
        });
        return sum(out);
    };
    return check_gradients("negative_control", f, {{"x", x}}, kLayerTolerance, o);
}

}  // namespace elf

#endif  // ELF_GRADCHECK_HPP
