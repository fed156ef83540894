#ifndef ELF_MODEL_HPP
#define ELF_MODEL_HPP

// Two-stage deraining pipeline:
//   rainy_sub     = down_s(rainy)
//   rain_pred_sub = IDN(rainy_sub)
//   derained_sub  = rainy_sub - rain_pred_sub
//   f_mam         = MAM(rain_pred_sub, rainy, derained_sub)
//   derained_full = BRN(f_mam) + up_s(derained_sub)

#include <map>
#include <memory>
#include <string>

#include "blocks.hpp"
#include "config.hpp"
#include "metrics.hpp"

namespace elf {

template <class T>
struct DerainOutputs {
    Tensor<T> rainy_sub;
    Tensor<T> rain_pred_sub;
    Tensor<T> derained_sub;
    Tensor<T> derained_full;
    MamTensors<T> mam;
};

template <class T>
class ElfModel {
public:
    explicit ElfModel(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)), params_(seed) {
        cfg_.validate();
        const std::size_t c = cfg_.channels;
        stem_ = Conv<T>(params_, "idn.stem", 3, c, 3);
        idn_ = std::make_shared<HybridBackbone<T>>(params_, "idn.backbone", cfg_);
        head_ = Conv<T>(params_, "idn.head", c, 3, 3, 1, 1, Init::Zeros);
        mam_ = MultiInputAttention<T>(params_, "mam", cfg_);
        brn_ = cfg_.tie_backbones ? idn_ : std::make_shared<HybridBackbone<T>>(params_, "brn.backbone", cfg_);
        tail_up_ = Rescale<T>(params_, "brn.tail.up", c, cfg_.sample_factor, 1);
        tail_out_ = Conv<T>(params_, "brn.tail.out", c, 3, 3, 1, 1, Init::Zeros);
    }

    ElfModel(const ElfModel&) = delete;
    ElfModel& operator=(const ElfModel&) = delete;
    ElfModel(ElfModel&&) noexcept = default;
    ElfModel& operator=(ElfModel&&) noexcept = default;

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    void check_extents(const Tensor<T>& rainy) const {
        if (rainy.rank() != 4 || rainy.dim(1) != 3)
            throw Error("elf: expected an [N,3,H,W] image batch, got " + to_string(rainy.shape()));
        const std::size_t m = cfg_.extent_multiple();
        if (rainy.dim(2) % m || rainy.dim(3) % m)
            throw Error("elf: image extents " + std::to_string(rainy.dim(2)) + "x" + std::to_string(rainy.dim(3)) +
                        " must be multiples of " + std::to_string(m));
    }

    DerainOutputs<T> forward(const Tensor<T>& rainy) const {
        check_extents(rainy);
        const std::size_t s = cfg_.sample_factor;
        DerainOutputs<T> out;
        // Both terms live on a dyadic grid so that the subtraction is exact.
        out.rainy_sub = snap(bilinear_scale(rainy, 1, s));
        out.rain_pred_sub = snap(head_((*idn_)(stem_(out.rainy_sub))));
        out.derained_sub = sub(out.rainy_sub, out.rain_pred_sub);
        out.mam = mam_.forward(out.rain_pred_sub, rainy, out.derained_sub);
        auto residual = tail_out_(tail_up_((*brn_)(out.mam.f_mam)));
        out.derained_full = add(residual, bilinear_scale(out.derained_sub, s, 1));
        return out;
    }

private:
    ModelConfig cfg_;
    ParamStore<T> params_;
    Conv<T> stem_, head_;
    std::shared_ptr<HybridBackbone<T>> idn_, brn_;
    MultiInputAttention<T> mam_;
    Rescale<T> tail_up_;
    Conv<T> tail_out_;
};

template <class T>
Tensor<T> charbonnier(const Tensor<T>& a, const Tensor<T>& b, T eps) {
    if (a.shape() != b.shape()) throw Error("charbonnier: shape mismatch");
    return mean(sqrt(add_scalar(square(sub(a, b)), eps * eps)));
}

template <class T>
struct LossTerms {
    Tensor<T> idn, brn, total;
};

// L = L_IDN + lambda * L_BRN, each branch Charbonnier + alpha * SSIM.
template <class T>
LossTerms<T> loss_joint(const DerainOutputs<T>& out, const Tensor<T>& clean, const ModelConfig& cfg) {
    if (clean.shape() != out.derained_full.shape())
        throw Error("loss: clean image " + to_string(clean.shape()) + " does not match output " +
                    to_string(out.derained_full.shape()));
    const T eps = static_cast<T>(cfg.epsilon), alpha = static_cast<T>(cfg.alpha);
    auto clean_sub = bilinear_scale(clean, 1, cfg.sample_factor);
    LossTerms<T> l;
    l.idn = add(charbonnier(out.derained_sub, clean_sub, eps), scale(ssim(out.derained_sub, clean_sub), alpha));
    l.brn = add(charbonnier(out.derained_full, clean, eps), scale(ssim(out.derained_full, clean), alpha));
    l.total = add(l.idn, scale(l.brn, static_cast<T>(cfg.lambda)));
    return l;
}

// Scalar parameter count of the model described by `cfg`.
inline std::size_t count_params(const ModelConfig& cfg) {
    return ElfModel<float>(cfg).params().count();
}

// Parameter counts grouped by the first two name components
// ("idn.backbone", "mam.sa", ...).
inline std::map<std::string, std::size_t> param_breakdown(const ModelConfig& cfg) {
    ElfModel<float> m(cfg);
    std::map<std::string, std::size_t> out;
    for (const auto& e : m.params().entries()) {
        const auto first = e.name.find('.');
        const auto second = e.name.find('.', first + 1);
        out[e.name.substr(0, second)] += e.tensor.size();
    }
    return out;
}

}  // namespace elf

#endif  // ELF_MODEL_HPP
