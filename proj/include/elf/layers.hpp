#ifndef ELF_LAYERS_HPP
#define ELF_LAYERS_HPP

// Parameterised building blocks. Each layer registers its tensors in a
// ParamStore under a hierarchical prefix at construction and is afterwards a
// stateless transform over (parameters, input).

#include <functional>
#include <string>
#include <vector>

#include "conv.hpp"
#include "ops.hpp"
#include "params.hpp"

namespace elf {

template <class T>
class Conv {
public:
    Conv() = default;
    Conv(ParamStore<T>& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
         std::size_t stride = 1, std::size_t groups = 1, Init init = Init::FanInUniform, bool bias = true)
        : opt_{stride, stride == 1 ? k / 2 : 0, stride == 1 ? k / 2 : 0, groups} {
        if (cin % groups || cout % groups) throw Error(name + ": channels not divisible by groups");
        const std::size_t fan_in = cin / groups * k * k;
        weight_ = ps.add(name + ".weight", Shape{cout, cin / groups, k, k}, init, fan_in);
        if (bias) bias_ = ps.add(name + ".bias", Shape{cout}, init, fan_in);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight_, bias_, opt_); }

    const Tensor<T>& weight() const { return weight_; }
    const Tensor<T>& bias() const { return bias_; }

private:
    Conv2dOptions opt_;
    Tensor<T> weight_, bias_;
};

// Depth-wise k x k (groups = C) followed by a point-wise 1 x 1.
template <class T>
class DSConv {
public:
    DSConv() = default;
    DSConv(ParamStore<T>& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k = 3,
           Init pointwise_init = Init::FanInUniform)
        : depthwise_(ps, name + ".dw", cin, cin, k, 1, cin), pointwise_(ps, name + ".pw", cin, cout, 1, 1, 1, pointwise_init) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return pointwise_(depthwise_(x)); }

    const Conv<T>& depthwise() const { return depthwise_; }
    const Conv<T>& pointwise() const { return pointwise_; }

private:
    Conv<T> depthwise_, pointwise_;
};

// Scalar count of a k x k DSConv / standard conv (both with biases).
constexpr std::size_t dsconv_param_count(std::size_t cin, std::size_t cout, std::size_t k) {
    return cin * k * k + cin + cin * cout + cout;
}
constexpr std::size_t conv_param_count(std::size_t cin, std::size_t cout, std::size_t k) {
    return cin * cout * k * k + cout;
}

// Squeeze-excitation style gate: GAP -> 1x1 (C -> C/r) -> ReLU -> 1x1 -> sigmoid.
template <class T>
class ChannelAttention {
public:
    ChannelAttention() = default;
    ChannelAttention(ParamStore<T>& ps, const std::string& name, std::size_t c, std::size_t reduction) {
        if (reduction == 0 || c % reduction)
            throw Error(name + ": channels " + std::to_string(c) + " not divisible by reduction " +
                        std::to_string(reduction));
        squeeze_ = Conv<T>(ps, name + ".squeeze", c, c / reduction, 1);
        excite_ = Conv<T>(ps, name + ".excite", c / reduction, c, 1);
    }

    Tensor<T> gate(const Tensor<T>& x) const { return sigmoid(excite_(relu(squeeze_(global_avg_pool(x))))); }
    Tensor<T> operator()(const Tensor<T>& x) const { return mul(x, gate(x)); }

private:
    Conv<T> squeeze_, excite_;
};

// Residual channel attention block: x + CA(conv(ReLU(conv(x)))).
// With `separable_head` the leading 3x3 conv is a DSConv.
template <class T>
class RCAB {
public:
    RCAB() = default;
    RCAB(ParamStore<T>& ps, const std::string& name, std::size_t c, std::size_t reduction, bool separable_head)
        : separable_(separable_head), ca_(ps, name + ".ca", c, reduction) {
        if (separable_) head_ds_ = DSConv<T>(ps, name + ".conv1", c, c, 3);
        else head_ = Conv<T>(ps, name + ".conv1", c, c, 3);
        tail_ = Conv<T>(ps, name + ".conv2", c, c, 3, 1, 1, Init::Zeros);
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        auto h = separable_ ? head_ds_(x) : head_(x);
        return add(x, ca_(tail_(relu(h))));
    }

private:
    bool separable_ = false;
    Conv<T> head_;
    DSConv<T> head_ds_;
    Conv<T> tail_;
    ChannelAttention<T> ca_;
};

// Per-pixel normalisation over the channel axis with a learned affine.
template <class T>
class LayerNormChannel {
public:
    LayerNormChannel() = default;
    LayerNormChannel(ParamStore<T>& ps, const std::string& name, std::size_t c, T eps = T(1e-5)) : eps_(eps) {
        weight_ = ps.add(name + ".weight", Shape{c}, Init::Ones);
        bias_ = ps.add(name + ".bias", Shape{c}, Init::Zeros);
    }

    Tensor<T> normalize(const Tensor<T>& x) const {
        auto centred = sub(x, mean_axis(x, 1));
        auto var = mean_axis(square(centred), 1);
        return div(centred, sqrt(add_scalar(var, eps_)));
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        const std::size_t c = x.dim(1);
        return add(mul(normalize(x), reshape(weight_, Shape{c, 1, 1})), reshape(bias_, Shape{c, 1, 1}));
    }

private:
    T eps_ = T(1e-5);
    Tensor<T> weight_, bias_;
};

// 1x1 (or k x k, stride k) projection followed by a depth-wise 3x3.
template <class T>
class Embedding {
public:
    Embedding() = default;
    Embedding(ParamStore<T>& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t stride = 1)
        : project_(ps, name + ".proj", cin, cout, stride, stride), local_(ps, name + ".dw", cout, cout, 3, 1, cout) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return local_(project_(x)); }

private:
    Conv<T> project_, local_;
};

// Collects every channel attention map produced while it is alive on this
// thread (instrumentation for shape and normalisation checks).
template <class T>
class AttentionRecorder {
public:
    AttentionRecorder() : prev_(active()) { active() = this; }
    ~AttentionRecorder() { active() = prev_; }
    AttentionRecorder(const AttentionRecorder&) = delete;
    AttentionRecorder& operator=(const AttentionRecorder&) = delete;

    const std::vector<Tensor<T>>& maps() const { return maps_; }

    static void offer(const Tensor<T>& m) {
        if (auto* r = active()) r->maps_.push_back(m.detach());
    }

private:
    static AttentionRecorder*& active() {
        thread_local AttentionRecorder* r = nullptr;
        return r;
    }
    AttentionRecorder* prev_;
    std::vector<Tensor<T>> maps_;
};

// Multi-head transposed (channel cross-covariance) attention. The attention
// map per head is (C/h) x (C/h) regardless of the number of pixels.
template <class T>
class TransposedAttention {
public:
    struct Sources {
        std::size_t q_channels, k_channels, v_channels;
        std::size_t q_stride = 1, k_stride = 1, v_stride = 1;
    };

    TransposedAttention() = default;
    TransposedAttention(ParamStore<T>& ps, const std::string& name, std::size_t c, std::size_t heads, Sources src)
        : heads_(heads) {
        if (heads == 0 || c % heads)
            throw Error(name + ": channels " + std::to_string(c) + " not divisible by heads " + std::to_string(heads));
        q_ = Embedding<T>(ps, name + ".q", src.q_channels, c, src.q_stride);
        k_ = Embedding<T>(ps, name + ".k", src.k_channels, c, src.k_stride);
        v_ = Embedding<T>(ps, name + ".v", src.v_channels, c, src.v_stride);
        temperature_ = ps.add(name + ".temperature", Shape{heads}, Init::Ones);
        out_ = Conv<T>(ps, name + ".out", c, c, 1, 1, 1, Init::Zeros);
    }

    TransposedAttention(ParamStore<T>& ps, const std::string& name, std::size_t c, std::size_t heads)
        : TransposedAttention(ps, name, c, heads, Sources{c, c, c}) {}

    Tensor<T> operator()(const Tensor<T>& q_src, const Tensor<T>& k_src, const Tensor<T>& v_src) const {
        auto q = q_(q_src), k = k_(k_src), v = v_(v_src);
        if (q.shape() != k.shape() || q.shape() != v.shape())
            throw Error("transposed attention: embedded Q/K/V shapes differ: " + to_string(q.shape()) + " " +
                        to_string(k.shape()) + " " + to_string(v.shape()));
        const std::size_t n = q.dim(0), c = q.dim(1), h = q.dim(2), w = q.dim(3);
        const Shape heads_shape{n, heads_, c / heads_, h * w};
        auto qh = l2_normalize(reshape(q, heads_shape), 3);
        auto kh = l2_normalize(reshape(k, heads_shape), 3);
        auto vh = reshape(v, heads_shape);
        auto logits = mul(matmul(kh, transpose_last2(qh)), reshape(temperature_, Shape{heads_, 1, 1}));
        auto attn = softmax(logits, 3);
        AttentionRecorder<T>::offer(attn);
        return out_(reshape(matmul(attn, vh), Shape{n, c, h, w}));
    }

private:
    std::size_t heads_ = 1;
    Embedding<T> q_, k_, v_;
    Tensor<T> temperature_;
    Conv<T> out_;
};

// 1x1 expand -> depth-wise 3x3 -> GELU -> 1x1 project (zero-initialised).
template <class T>
class FeedForward {
public:
    FeedForward() = default;
    FeedForward(ParamStore<T>& ps, const std::string& name, std::size_t c, std::size_t expansion)
        : expand_(ps, name + ".expand", c, c * expansion, 1),
          local_(ps, name + ".dw", c * expansion, c * expansion, 3, 1, c * expansion),
          project_(ps, name + ".project", c * expansion, c, 1, 1, 1, Init::Zeros) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return project_(gelu(local_(expand_(x)))); }

private:
    Conv<T> expand_, local_, project_;
};

// Pre-norm block: x + SA(LN(x)), then x + FFN(LN(x)).
template <class T>
class TransformerBlock {
public:
    TransformerBlock() = default;
    TransformerBlock(ParamStore<T>& ps, const std::string& name, std::size_t c, std::size_t heads,
                     std::size_t expansion)
        : norm1_(ps, name + ".norm1", c),
          attn_(ps, name + ".attn", c, heads),
          norm2_(ps, name + ".norm2", c),
          ffn_(ps, name + ".ffn", c, expansion) {}

    Tensor<T> operator()(const Tensor<T>& x) const {
        auto n1 = norm1_(x);
        auto y = add(x, attn_(n1, n1, n1));
        return add(y, ffn_(norm2_(y)));
    }

private:
    LayerNormChannel<T> norm1_;
    TransposedAttention<T> attn_;
    LayerNormChannel<T> norm2_;
    FeedForward<T> ffn_;
};

}  // namespace elf

#endif  // ELF_LAYERS_HPP
