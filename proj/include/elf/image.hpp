#ifndef ELF_IMAGE_HPP
#define ELF_IMAGE_HPP

// Images are [1,3,H,W] float tensors with values in [0,1].

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace elf {

using Image = Tensor<float>;

inline Image make_image(std::size_t h, std::size_t w, float fill = 0.0f) { return Image(Shape{1, 3, h, w}, fill); }

inline void check_image(const Image& img, const std::string& what) {
    if (!img.defined() || img.rank() != 4 || img.dim(0) != 1 || img.dim(1) != 3)
        throw Error(what + ": expected a [1,3,H,W] image");
}

inline std::uint8_t quantize(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// Any PNG colour type is converted to 8-bit RGB; grey replicates into all
// three channels and alpha is composited onto black.
inline Image load_png(const std::string& path) {
    png_image pi;
    std::memset(&pi, 0, sizeof(pi));
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&pi, path.c_str()))
        throw Error("cannot read PNG " + path + ": " + pi.message);
    pi.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(pi));
    if (!png_image_finish_read(&pi, nullptr, buf.data(), 0, nullptr)) {
        const std::string msg = pi.message;
        png_image_free(&pi);
        throw Error("cannot decode PNG " + path + ": " + msg);
    }
    const std::size_t h = pi.height, w = pi.width;
    Image img = make_image(h, w);
    auto& d = img.mutable_data();
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                d[(c * h + y) * w + x] = static_cast<float>(buf[(y * w + x) * 3 + c]) / 255.0f;
    return img;
}

inline void save_png_bytes(const std::string& path, std::size_t h, std::size_t w, const std::vector<png_byte>& rgb) {
    png_image pi;
    std::memset(&pi, 0, sizeof(pi));
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(w);
    pi.height = static_cast<png_uint_32>(h);
    pi.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&pi, path.c_str(), 0, rgb.data(), 0, nullptr))
        throw Error("cannot write PNG " + path + ": " + pi.message);
}

// Values are clamped to [0,1] and stored as round(v*255).
inline void save_png(const std::string& path, const Image& img) {
    check_image(img, "save_png " + path);
    const std::size_t h = img.dim(2), w = img.dim(3);
    std::vector<png_byte> buf(h * w * 3);
    const auto& d = img.data();
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) buf[(y * w + x) * 3 + c] = quantize(d[(c * h + y) * w + x]);
    save_png_bytes(path, h, w, buf);
}

}  // namespace elf

#endif  // ELF_IMAGE_HPP
