#ifndef ELF_CONFIG_HPP
#define ELF_CONFIG_HPP

#include <cstddef>
#include <string>

#include "tensor.hpp"

namespace elf {

struct ModelConfig {
    std::string variant = "ELF";
    std::size_t channels = 48;
    std::size_t rtb_depth = 10;
    std::size_t heads = 4;
    std::size_t sample_factor = 2;
    std::size_t rcab_per_stage = 1;
    std::size_t edb_stages = 6;
    std::size_t ca_reduction = 4;
    std::size_t ffn_expansion = 2;
    bool dsc_encoder = true;
    bool swap_qk = false;        // Q from the rain prediction, K from the rainy image
    bool tie_backbones = false;  // IDN and BRN share one backbone
    double alpha = -0.15;        // SSIM weight
    double lambda = 1.0;         // BRN loss weight
    double epsilon = 1e-3;       // Charbonnier constant

    static ModelConfig elf() { return {}; }

    static ModelConfig elf_lw() {
        ModelConfig c;
        c.variant = "ELF-LW";
        c.channels = 32;
        c.rtb_depth = 5;
        c.heads = 2;
        return c;
    }

    static ModelConfig desk() {
        ModelConfig c;
        c.variant = "desk";
        c.channels = 8;
        c.rtb_depth = 2;
        c.heads = 2;
        return c;
    }

    static ModelConfig from_variant(const std::string& name) {
        if (name == "ELF") return elf();
        if (name == "ELF-LW") return elf_lw();
        if (name == "desk") return desk();
        throw Error("unknown model variant '" + name + "' (expected ELF, ELF-LW or desk)");
    }

    std::size_t edb_levels() const { return edb_stages / 2; }

    // Input extents must be a multiple of this.
    std::size_t extent_multiple() const { return sample_factor * (std::size_t{1} << (edb_levels() - 1)); }

    void validate() const {
        if (channels == 0 || heads == 0 || channels % heads)
            throw Error("config: channels " + std::to_string(channels) + " not divisible by heads " +
                        std::to_string(heads));
        if (sample_factor < 2) throw Error("config: sample_factor must be >= 2");
        if (edb_stages < 2 || edb_stages % 2) throw Error("config: edb_stages must be even and >= 2");
        if (ca_reduction == 0 || channels % ca_reduction)
            throw Error("config: channels not divisible by ca_reduction");
        if (ffn_expansion == 0) throw Error("config: ffn_expansion must be positive");
        if (!(epsilon > 0)) throw Error("config: epsilon must be positive");
    }
};

}  // namespace elf

#endif  // ELF_CONFIG_HPP
