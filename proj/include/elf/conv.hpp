#ifndef ELF_CONV_HPP
#define ELF_CONV_HPP

#include <algorithm>
#include <string>

#include "tensor.hpp"

namespace elf {

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t pad_h = 0;
    std::size_t pad_w = 0;
    std::size_t groups = 1;
};

namespace detail {

struct ConvGeometry {
    std::size_t n, cin, h, w, cout, cin_g, kh, kw, oh, ow, stride, ph, pw, groups, cout_g;

    // Output columns whose input column (ox*stride + kx - pw) lands inside [0, w).
    std::pair<std::size_t, std::size_t> col_range(std::size_t kx) const {
        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(pw);
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(stride);
        std::ptrdiff_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
        std::ptrdiff_t hi = (static_cast<std::ptrdiff_t>(w) - 1 - off);
        hi = hi < 0 ? 0 : hi / s + 1;
        hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(ow));
        if (lo > hi) lo = hi;
        return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
    }
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& wt, const Conv2dOptions& o) {
    if (x.size() != 4) throw Error("conv2d: input must be NCHW, got " + to_string(x));
    if (wt.size() != 4) throw Error("conv2d: weight must be [Cout,Cin/g,kh,kw], got " + to_string(wt));
    if (o.groups == 0 || o.stride == 0) throw Error("conv2d: groups and stride must be positive");
    ConvGeometry g{};
    g.n = x[0];
    g.cin = x[1];
    g.h = x[2];
    g.w = x[3];
    g.cout = wt[0];
    g.cin_g = wt[1];
    g.kh = wt[2];
    g.kw = wt[3];
    g.stride = o.stride;
    g.ph = o.pad_h;
    g.pw = o.pad_w;
    g.groups = o.groups;
    if (g.cin % g.groups || g.cout % g.groups)
        throw Error("conv2d: channels (" + std::to_string(g.cin) + "->" + std::to_string(g.cout) +
                    ") not divisible by groups " + std::to_string(g.groups));
    if (g.cin / g.groups != g.cin_g)
        throw Error("conv2d: weight expects " + std::to_string(g.cin_g * g.groups) + " input channels, got " +
                    std::to_string(g.cin));
    g.cout_g = g.cout / g.groups;
    const std::size_t eh = g.h + 2 * g.ph, ew = g.w + 2 * g.pw;
    if (eh < g.kh || ew < g.kw) throw Error("conv2d: kernel larger than padded input");
    if ((eh - g.kh) % g.stride || (ew - g.kw) % g.stride)
        throw Error("conv2d: output extent is not integral for input " + to_string(x) + ", stride " +
                    std::to_string(g.stride));
    g.oh = (eh - g.kh) / g.stride + 1;
    g.ow = (ew - g.kw) / g.stride + 1;
    return g;
}

}  // namespace detail

// Grouped 2-D cross-correlation. `bias` may be undefined.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const Conv2dOptions& opt = {}) {
    const auto g = detail::conv_geometry(x.shape(), weight.shape(), opt);
    if (bias.defined() && (bias.size() != g.cout))
        throw Error("conv2d: bias has " + std::to_string(bias.size()) + " entries, expected " + std::to_string(g.cout));
    Tensor<T> out(Shape{g.n, g.cout, g.oh, g.ow});
    auto& o = out.mutable_data();
    const auto& in = x.data();
    const auto& wt = weight.data();
    const std::size_t ohw = g.oh * g.ow;

    for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t oc = 0; oc < g.cout; ++oc) {
            T* op = &o[(n * g.cout + oc) * ohw];
            if (bias.defined()) std::fill_n(op, ohw, bias.data()[oc]);
            const std::size_t grp = oc / g.cout_g;
            for (std::size_t icl = 0; icl < g.cin_g; ++icl) {
                const std::size_t ic = grp * g.cin_g + icl;
                const T* ip = &in[(n * g.cin + ic) * g.h * g.w];
                const T* wp = &wt[(oc * g.cin_g + icl) * g.kh * g.kw];
                for (std::size_t ky = 0; ky < g.kh; ++ky)
                    for (std::size_t kx = 0; kx < g.kw; ++kx) {
                        const T wv = wp[ky * g.kw + kx];
                        const auto [lo, hi] = g.col_range(kx);
                        if (hi <= lo) continue;
                        for (std::size_t oy = 0; oy < g.oh; ++oy) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                                      static_cast<std::ptrdiff_t>(g.ph);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                            const T* irow = ip + static_cast<std::size_t>(iy) * g.w + (lo * g.stride + kx - g.pw);
                            T* orow = op + oy * g.ow + lo;
                            const std::size_t cnt = hi - lo;
                            if (g.stride == 1) {
                                for (std::size_t j = 0; j < cnt; ++j) orow[j] += wv * irow[j];
                            } else {
                                for (std::size_t j = 0; j < cnt; ++j) orow[j] += wv * irow[j * g.stride];
                            }
                        }
                    }
            }
        }
    detail::check_finite(out, "conv2d");

    if (detail::needs_grad<T>({&x, &weight, &bias})) {
        auto xi = x.impl(), wi = weight.impl();
        auto bi = bias.defined() ? bias.impl() : nullptr;
        Tape<T>::current().record(out, [xi, wi, bi, g, ohw](const std::vector<T>& grad) {
            auto* gx = detail::grad_sink(xi);
            auto* gw = detail::grad_sink(wi);
            auto* gb = bi ? detail::grad_sink(bi) : nullptr;
            const auto& in = xi->data;
            const auto& wt = wi->data;
            for (std::size_t n = 0; n < g.n; ++n)
                for (std::size_t oc = 0; oc < g.cout; ++oc) {
                    const T* gp = &grad[(n * g.cout + oc) * ohw];
                    if (gb) {
                        T acc = 0;
                        for (std::size_t i = 0; i < ohw; ++i) acc += gp[i];
                        (*gb)[oc] += acc;
                    }
                    const std::size_t grp = oc / g.cout_g;
                    for (std::size_t icl = 0; icl < g.cin_g; ++icl) {
                        const std::size_t ic = grp * g.cin_g + icl;
                        const std::size_t plane = (n * g.cin + ic) * g.h * g.w;
                        const std::size_t wbase = (oc * g.cin_g + icl) * g.kh * g.kw;
                        for (std::size_t ky = 0; ky < g.kh; ++ky)
                            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                                const T wv = wt[wbase + ky * g.kw + kx];
                                const auto [lo, hi] = g.col_range(kx);
                                if (hi <= lo) continue;
                                T wacc = 0;
                                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                                              static_cast<std::ptrdiff_t>(g.ph);
                                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                                    const std::size_t roff =
                                        plane + static_cast<std::size_t>(iy) * g.w + (lo * g.stride + kx - g.pw);
                                    const T* grow = gp + oy * g.ow + lo;
                                    const T* irow = in.data() + roff;
                                    const std::size_t cnt = hi - lo;
                                    if (gw) {
                                        if (g.stride == 1)
                                            for (std::size_t j = 0; j < cnt; ++j) wacc += grow[j] * irow[j];
                                        else
                                            for (std::size_t j = 0; j < cnt; ++j) wacc += grow[j] * irow[j * g.stride];
                                    }
                                    if (gx) {
                                        T* girow = gx->data() + roff;
                                        if (g.stride == 1)
                                            for (std::size_t j = 0; j < cnt; ++j) girow[j] += wv * grow[j];
                                        else
                                            for (std::size_t j = 0; j < cnt; ++j) girow[j * g.stride] += wv * grow[j];
                                    }
                                }
                                if (gw) (*gw)[wbase + ky * g.kw + kx] += wacc;
                            }
                    }
                }
        });
    }
    return out;
}

}  // namespace elf

#endif  // ELF_CONV_HPP
