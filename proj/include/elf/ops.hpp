#ifndef ELF_OPS_HPP
#define ELF_OPS_HPP

// Differentiable primitives over Tensor<T>: elementwise arithmetic with
// trailing-aligned broadcasting, activations, reductions, shape plumbing,
// batched matmul and softmax.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace elf {

namespace detail {

// Maps every output element to its source offsets in `a` and `b`.
struct Broadcast {
    Shape out;
    std::vector<std::size_t> a_idx, b_idx;
    bool same = false;
};

inline Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
    Broadcast bc;
    if (a == b) {
        bc.out = a;
        bc.same = true;
        return bc;
    }
    const std::size_t r = std::max(a.size(), b.size());
    Shape pa(r, 1), pb(r, 1);
    std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
    bc.out.resize(r);
    for (std::size_t i = 0; i < r; ++i) {
        if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1)
            throw Error(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
        bc.out[i] = std::max(pa[i], pb[i]);
    }
    std::vector<std::size_t> sa(r), sb(r);
    std::size_t acc_a = 1, acc_b = 1;
    for (std::size_t i = r; i-- > 0;) {
        sa[i] = pa[i] == 1 ? 0 : acc_a;
        sb[i] = pb[i] == 1 ? 0 : acc_b;
        acc_a *= pa[i];
        acc_b *= pb[i];
    }
    const std::size_t n = numel(bc.out);
    bc.a_idx.resize(n);
    bc.b_idx.resize(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t k = 0; k < n; ++k) {
        bc.a_idx[k] = oa;
        bc.b_idx[k] = ob;
        for (std::size_t d = r; d-- > 0;) {
            if (++idx[d] < bc.out[d]) {
                oa += sa[d];
                ob += sb[d];
                break;
            }
            oa -= sa[d] * (bc.out[d] - 1);
            ob -= sb[d] * (bc.out[d] - 1);
            idx[d] = 0;
        }
    }
    return bc;
}

// [outer, n, inner] view around `axis`.
struct AxisView {
    std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisView axis_view(const Shape& s, std::size_t axis) {
    if (axis >= s.size()) throw Error("axis " + std::to_string(axis) + " out of range for " + to_string(s));
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
    v.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

template <class T, class Fwd, class Da, class Db>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd f, Da da, Db db) {
    auto bc = broadcast(a.shape(), b.shape(), name);
    Tensor<T> out(bc.out);
    auto& o = out.mutable_data();
    const auto& x = a.data();
    const auto& y = b.data();
    if (bc.same) {
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
    } else {
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[bc.a_idx[i]], y[bc.b_idx[i]]);
    }
    check_finite(out, name);
    if (needs_grad<T>({&a, &b})) {
        auto ai = a.impl(), bi = b.impl();
        Tape<T>::current().record(out, [ai, bi, bc = std::move(bc), da, db](const std::vector<T>& g) {
            auto* ga = grad_sink(ai);
            auto* gb = grad_sink(bi);
            const auto& x = ai->data;
            const auto& y = bi->data;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const std::size_t ia = bc.same ? i : bc.a_idx[i];
                const std::size_t ib = bc.same ? i : bc.b_idx[i];
                if (ga) (*ga)[ia] += da(x[ia], y[ib], g[i]);
                if (gb) (*gb)[ib] += db(x[ia], y[ib], g[i]);
            }
        });
    }
    return out;
}

template <class T, class Fwd, class Dx>
Tensor<T> unary(const Tensor<T>& a, const char* name, Fwd f, Dx dx) {
    Tensor<T> out(a.shape());
    auto& o = out.mutable_data();
    const auto& x = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i]);
    check_finite(out, name);
    if (needs_grad<T>({&a})) {
        auto ai = a.impl();
        auto oi = out.impl();
        Tape<T>::current().record(out, [ai, oi, dx](const std::vector<T>& g) {
            auto* ga = grad_sink(ai);
            if (!ga) return;
            const auto& x = ai->data;
            const auto& y = oi->data;
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * dx(x[i], y[i]);
        });
    }
    return out;
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T g) { return g; }, [](T, T, T g) { return g; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T g) { return g; }, [](T, T, T g) { return -g; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T g) { return g * y; },
        [](T x, T, T g) { return g * x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    for (T v : b.data())
        if (v == T(0)) throw Error("div: division by exact zero");
    return detail::binary(
        a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T g) { return g / y; },
        [](T x, T y, T g) { return -g * x / (y * y); });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    return detail::unary(a, "scale", [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    return detail::unary(a, "add_scalar", [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
    return scale(a, T(-1));
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
    return detail::unary(a, "square", [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& a) {
    for (T v : a.data())
        if (v < T(0)) throw Error("sqrt: negative input");
    for (T v : a.data())
        if (v == T(0) && detail::needs_grad<T>({&a})) throw Error("sqrt: gradient pole at zero");
    return detail::unary(a, "sqrt", [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
    return detail::unary(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

namespace detail {

// While enabled, piecewise-linear ops fold the branch taken by every element
// into a running hash. The gradient checker compares hashes across a finite
// difference to detect samples that straddle a kink.
struct BranchMonitor {
    bool enabled = false;
    std::uint64_t hash = 0xCBF29CE484222325ull;

    static BranchMonitor& current() {
        thread_local BranchMonitor m;
        return m;
    }
    void fold(std::uint64_t v) { hash = (hash ^ v) * 0x100000001B3ull; }
};

template <class T, class Branch>
void observe_branches(const Tensor<T>& a, Branch branch) {
    auto& m = BranchMonitor::current();
    if (!m.enabled) return;
    for (T x : a.data()) m.fold(branch(x));
}

}  // namespace detail

// Gradient is passed through strictly inside (lo, hi).
template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
    if (lo > hi) throw Error("clamp: lo > hi");
    detail::observe_branches(a, [lo, hi](T x) { return std::uint64_t(x > lo) + 2 * std::uint64_t(x < hi); });
    return detail::unary(
        a, "clamp", [lo, hi](T x) { return std::clamp(x, lo, hi); },
        [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
    detail::observe_branches(a, [](T x) { return std::uint64_t(x > T(0)); });
    return detail::unary(
        a, "relu", [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail::unary(
        a, "sigmoid", [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

// Exact (erf) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
    const T inv_sqrt2 = T(1) / std::sqrt(T(2));
    const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    return detail::unary(
        a, "gelu", [=](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
        [=](T x, T) { return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x); });
}

// Rounds onto the dyadic grid 2^-k with k = (mantissa bits - 5), so that sums
// and differences of snapped values below 16 in magnitude are exact. The
// gradient is passed straight through.
template <class T>
constexpr int snap_grid_exponent() {
    return std::numeric_limits<T>::digits - 5;
}

template <class T>
Tensor<T> snap(const Tensor<T>& a) {
    const T up = std::ldexp(T(1), snap_grid_exponent<T>());
    const T down = std::ldexp(T(1), -snap_grid_exponent<T>());
    for (T v : a.data())
        if (!(std::fabs(v) < T(16))) throw Error("snap: magnitude outside the exact range (|x| < 16)");
    return detail::unary(a, "snap", [=](T x) { return std::nearbyint(x * up) * down; }, [](T, T) { return T(1); });
}

// ---- reductions ------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    T s = 0;
    for (T v : a.data()) s += v;
    Tensor<T> out = Tensor<T>::scalar(s);
    detail::check_finite(out, "sum");
    if (detail::needs_grad<T>({&a})) {
        auto ai = a.impl();
        Tape<T>::current().record(out, [ai](const std::vector<T>& g) {
            auto* ga = detail::grad_sink(ai);
            if (!ga) return;
            for (auto& v : *ga) v += g[0];
        });
    }
    return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

// Sum over one axis, keeping it with extent 1.
template <class T>
Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis) {
    const auto v = detail::axis_view(a.shape(), axis);
    Shape s = a.shape();
    s[axis] = 1;
    Tensor<T> out(s);
    auto& o = out.mutable_data();
    const auto& x = a.data();
    for (std::size_t p = 0; p < v.outer; ++p)
        for (std::size_t k = 0; k < v.n; ++k) {
            const T* src = &x[(p * v.n + k) * v.inner];
            T* dst = &o[p * v.inner];
            for (std::size_t q = 0; q < v.inner; ++q) dst[q] += src[q];
        }
    detail::check_finite(out, "sum_axis");
    if (detail::needs_grad<T>({&a})) {
        auto ai = a.impl();
        Tape<T>::current().record(out, [ai, v](const std::vector<T>& g) {
            auto* ga = detail::grad_sink(ai);
            if (!ga) return;
            for (std::size_t p = 0; p < v.outer; ++p)
                for (std::size_t k = 0; k < v.n; ++k) {
                    T* dst = &(*ga)[(p * v.n + k) * v.inner];
                    const T* src = &g[p * v.inner];
                    for (std::size_t q = 0; q < v.inner; ++q) dst[q] += src[q];
                }
        });
    }
    return out;
}

template <class T>
Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis) {
    return scale(sum_axis(a, axis), T(1) / static_cast<T>(a.shape().at(axis)));
}

// [N,C,H,W] -> [N,C,1,1]
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    if (x.rank() != 4) throw Error("global_avg_pool: expected NCHW, got " + to_string(x.shape()));
    const Shape s = x.shape();
    Tensor<T> out(Shape{s[0], s[1], 1, 1});
    const std::size_t hw = s[2] * s[3];
    auto& o = out.mutable_data();
    const auto& d = x.data();
    for (std::size_t i = 0; i < s[0] * s[1]; ++i) {
        T acc = 0;
        for (std::size_t p = 0; p < hw; ++p) acc += d[i * hw + p];
        o[i] = acc / static_cast<T>(hw);
    }
    detail::check_finite(out, "global_avg_pool");
    if (detail::needs_grad<T>({&x})) {
        auto xi = x.impl();
        Tape<T>::current().record(out, [xi, hw](const std::vector<T>& g) {
            auto* gx = detail::grad_sink(xi);
            if (!gx) return;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T gi = g[i] / static_cast<T>(hw);
                for (std::size_t p = 0; p < hw; ++p) (*gx)[i * hw + p] += gi;
            }
        });
    }
    return out;
}

// ---- shape plumbing --------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape s) {
    if (numel(s) != a.size()) throw Error("reshape: " + to_string(a.shape()) + " -> " + to_string(s));
    Tensor<T> out(std::move(s), a.data());
    if (detail::needs_grad<T>({&a})) {
        auto ai = a.impl();
        Tape<T>::current().record(out, [ai](const std::vector<T>& g) {
            auto* ga = detail::grad_sink(ai);
            if (!ga) return;
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm) {
    const Shape& s = a.shape();
    const std::size_t r = s.size();
    if (perm.size() != r) throw Error("permute: rank mismatch");
    std::vector<bool> seen(r, false);
    for (auto p : perm) {
        if (p >= r || seen[p]) throw Error("permute: invalid permutation");
        seen[p] = true;
    }
    Shape os(r);
    for (std::size_t i = 0; i < r; ++i) os[i] = s[perm[i]];
    std::vector<std::size_t> in_stride(r);
    std::size_t acc = 1;
    for (std::size_t i = r; i-- > 0;) {
        in_stride[i] = acc;
        acc *= s[i];
    }
    // source offset of each destination element
    const std::size_t n = a.size();
    std::vector<std::size_t> src(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t k = 0; k < n; ++k) {
        src[k] = off;
        for (std::size_t d = r; d-- > 0;) {
            if (++idx[d] < os[d]) {
                off += in_stride[perm[d]];
                break;
            }
            off -= in_stride[perm[d]] * (os[d] - 1);
            idx[d] = 0;
        }
    }
    Tensor<T> out(os);
    auto& o = out.mutable_data();
    const auto& x = a.data();
    for (std::size_t k = 0; k < n; ++k) o[k] = x[src[k]];
    if (detail::needs_grad<T>({&a})) {
        auto ai = a.impl();
        Tape<T>::current().record(out, [ai, src = std::move(src)](const std::vector<T>& g) {
            auto* ga = detail::grad_sink(ai);
            if (!ga) return;
            for (std::size_t k = 0; k < g.size(); ++k) (*ga)[src[k]] += g[k];
        });
    }
    return out;
}

template <class T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
    const std::size_t r = a.rank();
    if (r < 2) throw Error("transpose_last2: rank < 2");
    std::vector<std::size_t> perm(r);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::swap(perm[r - 1], perm[r - 2]);
    return permute(a, perm);
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
    if (xs.empty()) throw Error("concat: no inputs");
    Shape s = xs[0].shape();
    if (axis >= s.size()) throw Error("concat: bad axis");
    std::size_t total = 0;
    for (const auto& x : xs) {
        Shape a = x.shape(), b = s;
        if (a.size() != b.size()) throw Error("concat: rank mismatch");
        a[axis] = b[axis] = 0;
        if (a != b) throw Error("concat: shape mismatch " + to_string(x.shape()) + " vs " + to_string(s));
        total += x.shape()[axis];
    }
    s[axis] = total;
    const auto v = detail::axis_view(s, axis);
    Tensor<T> out(s);
    auto& o = out.mutable_data();
    std::vector<std::size_t> offsets;
    std::size_t at = 0;
    for (const auto& x : xs) {
        offsets.push_back(at);
        const std::size_t n = x.shape()[axis];
        const auto& d = x.data();
        for (std::size_t p = 0; p < v.outer; ++p)
            std::copy_n(&d[p * n * v.inner], n * v.inner, &o[(p * v.n + at) * v.inner]);
        at += n;
    }
    std::vector<const Tensor<T>*> ptrs;
    bool any = false;
    if (Tape<T>::current().recording())
        for (const auto& x : xs) any = any || x.requires_grad();
    if (any) {
        std::vector<std::shared_ptr<TensorImpl<T>>> impls;
        for (const auto& x : xs) impls.push_back(x.impl());
        Tape<T>::current().record(out, [impls, offsets, v, axis](const std::vector<T>& g) {
            for (std::size_t k = 0; k < impls.size(); ++k) {
                auto* gx = detail::grad_sink(impls[k]);
                if (!gx) continue;
                const std::size_t n = impls[k]->shape[axis];
                for (std::size_t p = 0; p < v.outer; ++p) {
                    const T* src = &g[(p * v.n + offsets[k]) * v.inner];
                    T* dst = &(*gx)[p * n * v.inner];
                    for (std::size_t q = 0; q < n * v.inner; ++q) dst[q] += src[q];
                }
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
    const auto v = detail::axis_view(a.shape(), axis);
    if (start + len > v.n || len == 0) throw Error("slice: range out of bounds");
    Shape s = a.shape();
    s[axis] = len;
    Tensor<T> out(s);
    auto& o = out.mutable_data();
    const auto& x = a.data();
    for (std::size_t p = 0; p < v.outer; ++p)
        std::copy_n(&x[(p * v.n + start) * v.inner], len * v.inner, &o[p * len * v.inner]);
    if (detail::needs_grad<T>({&a})) {
        auto ai = a.impl();
        Tape<T>::current().record(out, [ai, v, start, len](const std::vector<T>& g) {
            auto* ga = detail::grad_sink(ai);
            if (!ga) return;
            for (std::size_t p = 0; p < v.outer; ++p) {
                T* dst = &(*ga)[(p * v.n + start) * v.inner];
                const T* src = &g[p * len * v.inner];
                for (std::size_t q = 0; q < len * v.inner; ++q) dst[q] += src[q];
            }
        });
    }
    return out;
}

// Zero padding of the two trailing (spatial) axes.
template <class T>
Tensor<T> pad2d(const Tensor<T>& a, std::size_t top, std::size_t bottom, std::size_t left, std::size_t right) {
    if (a.rank() < 2) throw Error("pad2d: rank < 2");
    const Shape& s = a.shape();
    const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
    const std::size_t planes = a.size() / (h * w);
    const std::size_t oh = h + top + bottom, ow = w + left + right;
    Shape os = s;
    os[os.size() - 2] = oh;
    os[os.size() - 1] = ow;
    Tensor<T> out(os);
    auto& o = out.mutable_data();
    const auto& x = a.data();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < h; ++y)
            std::copy_n(&x[(p * h + y) * w], w, &o[(p * oh + y + top) * ow + left]);
    if (detail::needs_grad<T>({&a})) {
        auto ai = a.impl();
        Tape<T>::current().record(out, [ai, planes, h, w, oh, ow, top, left](const std::vector<T>& g) {
            auto* ga = detail::grad_sink(ai);
            if (!ga) return;
            for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t x = 0; x < w; ++x) (*ga)[(p * h + y) * w + x] += g[(p * oh + y + top) * ow + left + x];
        });
    }
    return out;
}

// ---- matmul / softmax ------------------------------------------------------

// [..., m, k] x [..., k, n]; batch prefixes must match, or one side has a
// single batch which is broadcast.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2) throw Error("matmul: operands need rank >= 2");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const std::size_t m = sa[sa.size() - 2], k = sa[sa.size() - 1];
    const std::size_t k2 = sb[sb.size() - 2], n = sb[sb.size() - 1];
    if (k != k2) throw Error("matmul: inner extents differ " + to_string(sa) + " x " + to_string(sb));
    const Shape pa(sa.begin(), sa.end() - 2), pb(sb.begin(), sb.end() - 2);
    const std::size_t ba = numel(pa), bb = numel(pb);
    Shape prefix;
    if (pa == pb) prefix = pa;
    else if (ba == 1) prefix = pb;
    else if (bb == 1) prefix = pa;
    else throw Error("matmul: batch prefixes differ " + to_string(sa) + " x " + to_string(sb));
    const std::size_t batch = numel(prefix);
    Shape os = prefix;
    os.push_back(m);
    os.push_back(n);
    Tensor<T> out(os);
    auto& o = out.mutable_data();
    const auto& x = a.data();
    const auto& y = b.data();
    for (std::size_t bi = 0; bi < batch; ++bi) {
        const T* A = &x[(ba == 1 ? 0 : bi) * m * k];
        const T* B = &y[(bb == 1 ? 0 : bi) * k * n];
        T* C = &o[bi * m * n];
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                const T av = A[i * k + p];
                const T* brow = B + p * n;
                T* crow = C + i * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
    }
    detail::check_finite(out, "matmul");
    if (detail::needs_grad<T>({&a, &b})) {
        auto ai = a.impl(), bi_ = b.impl();
        Tape<T>::current().record(out, [ai, bi_, batch, ba, bb, m, k, n](const std::vector<T>& g) {
            auto* ga = detail::grad_sink(ai);
            auto* gb = detail::grad_sink(bi_);
            const auto& x = ai->data;
            const auto& y = bi_->data;
            for (std::size_t bi = 0; bi < batch; ++bi) {
                const T* A = &x[(ba == 1 ? 0 : bi) * m * k];
                const T* B = &y[(bb == 1 ? 0 : bi) * k * n];
                const T* G = &g[bi * m * n];
                if (ga) {  // dA = G B^T
                    T* dA = &(*ga)[(ba == 1 ? 0 : bi) * m * k];
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                            T acc = 0;
                            for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
                            dA[i * k + p] += acc;
                        }
                }
                if (gb) {  // dB = A^T G
                    T* dB = &(*gb)[(bb == 1 ? 0 : bi) * k * n];
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                            const T av = A[i * k + p];
                            for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += av * G[i * n + j];
                        }
                }
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
    const auto v = detail::axis_view(a.shape(), axis);
    Tensor<T> out(a.shape());
    auto& o = out.mutable_data();
    const auto& x = a.data();
    for (std::size_t p = 0; p < v.outer; ++p)
        for (std::size_t q = 0; q < v.inner; ++q) {
            const std::size_t base = p * v.n * v.inner + q;
            T mx = x[base];
            for (std::size_t k = 1; k < v.n; ++k) mx = std::max(mx, x[base + k * v.inner]);
            T z = 0;
            for (std::size_t k = 0; k < v.n; ++k) {
                const T e = std::exp(x[base + k * v.inner] - mx);
                o[base + k * v.inner] = e;
                z += e;
            }
            for (std::size_t k = 0; k < v.n; ++k) o[base + k * v.inner] /= z;
        }
    detail::check_finite(out, "softmax");
    if (detail::needs_grad<T>({&a})) {
        auto ai = a.impl();
        auto oi = out.impl();
        Tape<T>::current().record(out, [ai, oi, v](const std::vector<T>& g) {
            auto* ga = detail::grad_sink(ai);
            if (!ga) return;
            const auto& y = oi->data;
            for (std::size_t p = 0; p < v.outer; ++p)
                for (std::size_t q = 0; q < v.inner; ++q) {
                    const std::size_t base = p * v.n * v.inner + q;
                    T dot = 0;
                    for (std::size_t k = 0; k < v.n; ++k) dot += g[base + k * v.inner] * y[base + k * v.inner];
                    for (std::size_t k = 0; k < v.n; ++k) {
                        const std::size_t i = base + k * v.inner;
                        (*ga)[i] += y[i] * (g[i] - dot);
                    }
                }
        });
    }
    return out;
}

// x / sqrt(sum(x^2 along axis) + eps^2)
template <class T>
Tensor<T> l2_normalize(const Tensor<T>& x, std::size_t axis, T eps = T(1e-6)) {
    auto norm = sqrt(add_scalar(sum_axis(square(x), axis), eps * eps));
    return div(x, norm);
}

}  // namespace elf

#endif  // ELF_OPS_HPP
