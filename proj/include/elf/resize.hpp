#ifndef ELF_RESIZE_HPP
#define ELF_RESIZE_HPP

// Bilinear resampling with half-pixel centres: output pixel o maps to source
// coordinate (o + 0.5) * in/out - 0.5. Near the border the two closest source
// samples are extrapolated linearly rather than clamped, so affine images are
// reproduced exactly at every pixel.

#include <algorithm>
#include <cmath>
#include <vector>

#include "tensor.hpp"

namespace elf {

namespace detail {

struct AxisTaps {
    std::vector<std::size_t> i0, i1;
    std::vector<double> t;
};

inline AxisTaps axis_taps(std::size_t in, std::size_t out) {
    AxisTaps a;
    a.i0.resize(out);
    a.i1.resize(out);
    a.t.resize(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        if (in == 1) {
            a.i0[o] = a.i1[o] = 0;
            a.t[o] = 0.0;
            continue;
        }
        const double c = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        auto base = static_cast<std::ptrdiff_t>(std::floor(c));
        base = std::clamp<std::ptrdiff_t>(base, 0, static_cast<std::ptrdiff_t>(in) - 2);
        a.i0[o] = static_cast<std::size_t>(base);
        a.i1[o] = a.i0[o] + 1;
        a.t[o] = c - static_cast<double>(base);
    }
    return a;
}

}  // namespace detail

template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    if (x.rank() != 4) throw Error("bilinear_resize: expected NCHW, got " + to_string(x.shape()));
    if (out_h == 0 || out_w == 0) throw Error("bilinear_resize: target size must be positive");
    const Shape s = x.shape();
    const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
    const auto ty = detail::axis_taps(h, out_h);
    const auto tx = detail::axis_taps(w, out_w);
    Tensor<T> out(Shape{s[0], s[1], out_h, out_w});
    auto& o = out.mutable_data();
    const auto& d = x.data();
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = &d[p * h * w];
        T* dst = &o[p * out_h * out_w];
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const T wy = static_cast<T>(ty.t[oy]);
            const T* r0 = src + ty.i0[oy] * w;
            const T* r1 = src + ty.i1[oy] * w;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const T wx = static_cast<T>(tx.t[ox]);
                const T top = r0[tx.i0[ox]] + wx * (r0[tx.i1[ox]] - r0[tx.i0[ox]]);
                const T bot = r1[tx.i0[ox]] + wx * (r1[tx.i1[ox]] - r1[tx.i0[ox]]);
                dst[oy * out_w + ox] = top + wy * (bot - top);
            }
        }
    }
    detail::check_finite(out, "bilinear_resize");
    if (detail::needs_grad<T>({&x})) {
        auto xi = x.impl();
        Tape<T>::current().record(out, [xi, ty, tx, planes, h, w, out_h, out_w](const std::vector<T>& g) {
            auto* gx = detail::grad_sink(xi);
            if (!gx) return;
            for (std::size_t p = 0; p < planes; ++p) {
                T* dst = gx->data() + p * h * w;
                const T* gp = &g[p * out_h * out_w];
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const T wy = static_cast<T>(ty.t[oy]);
                    T* r0 = dst + ty.i0[oy] * w;
                    T* r1 = dst + ty.i1[oy] * w;
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const T wx = static_cast<T>(tx.t[ox]);
                        const T gv = gp[oy * out_w + ox];
                        const T gt = gv * (T(1) - wy), gbt = gv * wy;
                        r0[tx.i0[ox]] += gt * (T(1) - wx);
                        r0[tx.i1[ox]] += gt * wx;
                        r1[tx.i0[ox]] += gbt * (T(1) - wx);
                        r1[tx.i1[ox]] += gbt * wx;
                    }
                }
            }
        });
    }
    return out;
}

// Resize by a rational factor num/den; the target extents must be integral.
template <class T>
Tensor<T> bilinear_scale(const Tensor<T>& x, std::size_t num, std::size_t den) {
    if (num == 0 || den == 0) throw Error("bilinear_scale: factor must be positive");
    const std::size_t h = x.dim(2), w = x.dim(3);
    if ((h * num) % den || (w * num) % den)
        throw Error("bilinear_scale: " + to_string(x.shape()) + " scaled by " + std::to_string(num) + "/" +
                    std::to_string(den) + " is not integral");
    return bilinear_resize(x, h * num / den, w * num / den);
}

}  // namespace elf

#endif  // ELF_RESIZE_HPP
