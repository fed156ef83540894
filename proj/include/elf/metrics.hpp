#ifndef ELF_METRICS_HPP
#define ELF_METRICS_HPP

// PSNR and SSIM. SSIM is built from differentiable primitives so the same
// implementation serves as metric and as loss term.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "conv.hpp"
#include "ops.hpp"

namespace elf {

inline constexpr double kPsnrCapDb = 99.0;

template <class T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw Error("mse: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

// Peak value 1; identical inputs report kPsnrCapDb.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    const double m = mse(a, b);
    if (m == 0.0) return kPsnrCapDb;
    return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / m));
}

struct SsimOptions {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

inline std::vector<double> gaussian_window(std::size_t n, double sigma) {
    std::vector<double> g(n);
    double z = 0;
    const double c = (static_cast<double>(n) - 1.0) / 2.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(i) - c;
        g[i] = std::exp(-d * d / (2 * sigma * sigma));
        z += g[i];
    }
    for (auto& v : g) v /= z;
    return g;
}

namespace detail {

// Separable Gaussian blur without padding ("valid" window positions only).
template <class T>
Tensor<T> gaussian_blur_valid(const Tensor<T>& x, const SsimOptions& o) {
    const std::size_t c = x.dim(1);
    const auto g = gaussian_window(o.window, o.sigma);
    std::vector<T> wv(c * o.window), wh(c * o.window);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < o.window; ++i) wv[ch * o.window + i] = wh[ch * o.window + i] = static_cast<T>(g[i]);
    Tensor<T> kv(Shape{c, 1, o.window, 1}, std::move(wv));
    Tensor<T> kh(Shape{c, 1, 1, o.window}, std::move(wh));
    Conv2dOptions opt;
    opt.groups = c;
    return conv2d(conv2d(x, kv, Tensor<T>(), opt), kh, Tensor<T>(), opt);
}

}  // namespace detail

// Mean SSIM over all channels and valid window positions.
template <class T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimOptions& o = {}) {
    if (a.shape() != b.shape()) throw Error("ssim: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    if (a.rank() != 4) throw Error("ssim: expected NCHW");
    if (a.dim(2) < o.window || a.dim(3) < o.window)
        throw Error("ssim: image " + std::to_string(a.dim(2)) + "x" + std::to_string(a.dim(3)) + " smaller than the " +
                    std::to_string(o.window) + "x" + std::to_string(o.window) + " window");
    const T c1 = static_cast<T>(o.k1 * o.k1), c2 = static_cast<T>(o.k2 * o.k2);
    auto mu_a = detail::gaussian_blur_valid(a, o);
    auto mu_b = detail::gaussian_blur_valid(b, o);
    auto mu_aa = mul(mu_a, mu_a), mu_bb = mul(mu_b, mu_b), mu_ab = mul(mu_a, mu_b);
    auto s_aa = sub(detail::gaussian_blur_valid(mul(a, a), o), mu_aa);
    auto s_bb = sub(detail::gaussian_blur_valid(mul(b, b), o), mu_bb);
    auto s_ab = sub(detail::gaussian_blur_valid(mul(a, b), o), mu_ab);
    auto num = mul(add_scalar(scale(mu_ab, T(2)), c1), add_scalar(scale(s_ab, T(2)), c2));
    auto den = mul(add_scalar(add(mu_aa, mu_bb), c1), add_scalar(add(s_aa, s_bb), c2));
    return mean(div(num, den));
}

template <class T>
double ssim_value(const Tensor<T>& a, const Tensor<T>& b, const SsimOptions& o = {}) {
    NoGradGuard<T> guard;
    return static_cast<double>(ssim(a, b, o).item());
}

}  // namespace elf

#endif  // ELF_METRICS_HPP
