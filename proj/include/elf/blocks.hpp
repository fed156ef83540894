#ifndef ELF_BLOCKS_HPP
#define ELF_BLOCKS_HPP

// Composite blocks of the hybrid fusion network: the residual Transformer
// branch, the encoder-decoder branch, the hybrid fusion block and the
// multi-input attention module.

#include <string>
#include <vector>

#include "config.hpp"
#include "layers.hpp"
#include "resize.hpp"

namespace elf {

// Concat -> DSConv 3x3 (k*C -> C) -> channel attention.
template <class T>
class HybridFusion {
public:
    HybridFusion() = default;
    HybridFusion(ParamStore<T>& ps, const std::string& name, std::size_t c, std::size_t inputs, std::size_t reduction)
        : inputs_(inputs), c_(c), mix_(ps, name + ".mix", inputs * c, c, 3), ca_(ps, name + ".ca", c, reduction) {
        if (inputs < 2) throw Error(name + ": fusion needs at least two inputs");
    }

    Tensor<T> operator()(const std::vector<Tensor<T>>& xs) const {
        if (xs.size() != inputs_)
            throw Error("hfb: expected " + std::to_string(inputs_) + " inputs, got " + std::to_string(xs.size()));
        for (const auto& x : xs) {
            if (x.shape() != xs[0].shape()) throw Error("hfb: inputs differ in shape");
            if (x.dim(1) != c_) throw Error("hfb: input has " + std::to_string(x.dim(1)) + " channels");
        }
        return ca_(mix_(concat(xs, 1)));
    }

private:
    std::size_t inputs_ = 2, c_ = 0;
    DSConv<T> mix_;
    ChannelAttention<T> ca_;
};

// x + P(blocks(x)) with P a zero-initialised 1x1 projection.
template <class T>
class ResidualTransformerBranch {
public:
    ResidualTransformerBranch() = default;
    ResidualTransformerBranch(ParamStore<T>& ps, const std::string& name, const ModelConfig& cfg) {
        for (std::size_t i = 0; i < cfg.rtb_depth; ++i)
            blocks_.emplace_back(ps, name + ".block" + std::to_string(i), cfg.channels, cfg.heads, cfg.ffn_expansion);
        out_ = Conv<T>(ps, name + ".out", cfg.channels, cfg.channels, 1, 1, 1, Init::Zeros);
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        Tensor<T> y = x;
        for (const auto& b : blocks_) y = b(y);
        return add(x, out_(y));
    }

private:
    std::vector<TransformerBlock<T>> blocks_;
    Conv<T> out_;
};

// Bilinear rescale followed by a 1x1 conv.
template <class T>
class Rescale {
public:
    Rescale() = default;
    Rescale(ParamStore<T>& ps, const std::string& name, std::size_t c, std::size_t num, std::size_t den)
        : num_(num), den_(den), conv_(ps, name + ".conv", c, c, 1) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return conv_(bilinear_scale(x, num_, den_)); }

private:
    std::size_t num_ = 1, den_ = 1;
    Conv<T> conv_;
};

// U-shaped branch. Encoder level i runs at scale 1/2^i; the decoder mirrors
// it and merges encoder level i through a skip RCAB and an HFB.
template <class T>
class EncoderDecoderBranch {
public:
    EncoderDecoderBranch() = default;
    EncoderDecoderBranch(ParamStore<T>& ps, const std::string& name, const ModelConfig& cfg)
        : levels_(cfg.edb_levels()) {
        const std::size_t c = cfg.channels, r = cfg.ca_reduction;
        for (std::size_t i = 0; i < levels_; ++i) {
            const std::string p = name + ".enc" + std::to_string(i);
            Stage s;
            if (i > 0) s.rescale = Rescale<T>(ps, p + ".down", c, 1, 2);
            for (std::size_t k = 0; k < cfg.rcab_per_stage; ++k)
                s.rcabs.emplace_back(ps, p + ".rcab" + std::to_string(k), c, r, cfg.dsc_encoder);
            encoder_.push_back(std::move(s));
        }
        for (std::size_t j = 0; j < levels_; ++j) {
            const std::string p = name + ".dec" + std::to_string(j);
            Stage s;
            if (j > 0) s.rescale = Rescale<T>(ps, p + ".up", c, 2, 1);
            s.skip = RCAB<T>(ps, p + ".skip", c, r, false);
            s.fuse = HybridFusion<T>(ps, p + ".hfb", c, 2, r);
            for (std::size_t k = 0; k < cfg.rcab_per_stage; ++k)
                s.rcabs.emplace_back(ps, p + ".rcab" + std::to_string(k), c, r, false);
            decoder_.push_back(std::move(s));
        }
    }

    std::size_t required_multiple() const { return std::size_t{1} << (levels_ - 1); }

    Tensor<T> operator()(const Tensor<T>& x) const {
        const std::size_t m = required_multiple();
        if (x.dim(2) % m || x.dim(3) % m)
            throw Error("edb: spatial extents " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                        " must be multiples of " + std::to_string(m) + "; pad the input accordingly");
        std::vector<Tensor<T>> enc;
        Tensor<T> y = x;
        for (std::size_t i = 0; i < levels_; ++i) {
            if (i > 0) y = encoder_[i].rescale(y);
            for (const auto& b : encoder_[i].rcabs) y = b(y);
            enc.push_back(y);
        }
        for (std::size_t j = 0; j < levels_; ++j) {
            const auto& s = decoder_[j];
            if (j > 0) y = s.rescale(y);
            y = s.fuse({y, s.skip(enc[levels_ - 1 - j])});
            for (const auto& b : s.rcabs) y = b(y);
        }
        return y;
    }

private:
    struct Stage {
        Rescale<T> rescale;
        RCAB<T> skip;
        HybridFusion<T> fuse;
        std::vector<RCAB<T>> rcabs;
    };
    std::size_t levels_ = 3;
    std::vector<Stage> encoder_, decoder_;
};

// RTB and EDB in parallel on the same features, merged by an HFB.
template <class T>
class HybridBackbone {
public:
    HybridBackbone() = default;
    HybridBackbone(ParamStore<T>& ps, const std::string& name, const ModelConfig& cfg)
        : rtb_(ps, name + ".rtb", cfg),
          edb_(ps, name + ".edb", cfg),
          merge_(ps, name + ".merge", cfg.channels, 2, cfg.ca_reduction) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return merge_({rtb_(x), edb_(x)}); }

    const ResidualTransformerBranch<T>& rtb() const { return rtb_; }
    const EncoderDecoderBranch<T>& edb() const { return edb_; }

private:
    ResidualTransformerBranch<T> rtb_;
    EncoderDecoderBranch<T> edb_;
    HybridFusion<T> merge_;
};

template <class T>
struct MamTensors {
    Tensor<T> f_bt;   // background texture extracted from the rainy image
    Tensor<T> f_b_s;  // embedding of the sub-grid derained image
    Tensor<T> f_mam;  // fused output handed to BRN
};

// Multi-input attention: the predicted rain map keys a channel attention over
// the rainy image, whose values are brought to the sub-grid by a stride-s
// embedding. The result is fused with an embedding of the derained sub-image.
template <class T>
class MultiInputAttention {
public:
    MultiInputAttention() = default;
    MultiInputAttention(ParamStore<T>& ps, const std::string& name, const ModelConfig& cfg)
        : s_(cfg.sample_factor), swap_qk_(cfg.swap_qk) {
        typename TransposedAttention<T>::Sources src{3, 3, 3, s_, 1, s_};
        if (swap_qk_) src = {3, 3, 3, 1, s_, s_};
        sa_ = TransposedAttention<T>(ps, name + ".sa", cfg.channels, cfg.heads, src);
        embed_b_ = Conv<T>(ps, name + ".embed_b", 3, cfg.channels, 3);
        fuse_ = HybridFusion<T>(ps, name + ".hfb", cfg.channels, 2, cfg.ca_reduction);
    }

    MamTensors<T> forward(const Tensor<T>& rain_pred, const Tensor<T>& rainy_full, const Tensor<T>& derained_sub) const {
        if (rain_pred.shape() != derained_sub.shape())
            throw Error("mam: rain prediction and derained sub-image differ in shape");
        if (rainy_full.dim(0) != rain_pred.dim(0) || rainy_full.dim(2) != rain_pred.dim(2) * s_ ||
            rainy_full.dim(3) != rain_pred.dim(3) * s_)
            throw Error("mam: rainy image " + to_string(rainy_full.shape()) + " is not " + std::to_string(s_) +
                        "x the sub-grid " + to_string(rain_pred.shape()));
        MamTensors<T> t;
        t.f_bt = swap_qk_ ? sa_(rain_pred, rainy_full, rainy_full) : sa_(rainy_full, rain_pred, rainy_full);
        t.f_b_s = embed_b_(derained_sub);
        t.f_mam = fuse_({t.f_bt, t.f_b_s});
        return t;
    }

    Tensor<T> operator()(const Tensor<T>& rain_pred, const Tensor<T>& rainy_full, const Tensor<T>& derained_sub) const {
        return forward(rain_pred, rainy_full, derained_sub).f_mam;
    }

private:
    std::size_t s_ = 2;
    bool swap_qk_ = false;
    TransposedAttention<T> sa_;
    Conv<T> embed_b_;
    HybridFusion<T> fuse_;
};

}  // namespace elf

#endif  // ELF_BLOCKS_HPP
