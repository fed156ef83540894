#ifndef ELF_DATA_HPP
#define ELF_DATA_HPP

// Desk-scale data: procedural clean images, additive rain streaks, patch
// cropping, manifests and the luma histogram analysis.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "image.hpp"
#include "ops.hpp"
#include "params.hpp"
#include "resize.hpp"

namespace elf {

struct SamplePair {
    Image rainy;
    Image clean;
    std::string id;
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finaliser
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

enum class CleanKind { Ramp, Checker, Blobs, Mixed };

inline CleanKind parse_clean_kind(const std::string& s) {
    if (s == "ramp") return CleanKind::Ramp;
    if (s == "checker") return CleanKind::Checker;
    if (s == "blobs") return CleanKind::Blobs;
    if (s == "mixed") return CleanKind::Mixed;
    throw Error("unknown image kind '" + s + "' (expected ramp, checker, blobs or mixed)");
}

inline std::string to_string(CleanKind k) {
    switch (k) {
        case CleanKind::Ramp: return "ramp";
        case CleanKind::Checker: return "checker";
        case CleanKind::Blobs: return "blobs";
        case CleanKind::Mixed: return "mixed";
    }
    return "?";
}

namespace detail {

inline void check_size(std::size_t size, std::size_t multiple) {
    if (size == 0 || size % multiple)
        throw Error("image size " + std::to_string(size) + " must be a positive multiple of " + std::to_string(multiple));
}

// Two-colour checkerboard; the colours are complementary so every channel
// averages exactly 0.5.
inline Image checker(std::size_t n, std::mt19937_64& rng) {
    const std::size_t cell = unit_uniform(rng) < 0.5 ? 4 : 8;
    float lo[3];
    for (auto& v : lo) v = static_cast<float>(uniform(rng, 0.05, 0.35));
    Image img = make_image(n, n);
    auto& d = img.mutable_data();
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                const bool odd = ((y / cell) + (x / cell)) % 2;
                d[(c * n + y) * n + x] = odd ? 1.0f - lo[c] : lo[c];
            }
    return img;
}

// Smooth two-colour gradient with anti-aliased discs painted over it.
inline Image blobs(std::size_t n, std::mt19937_64& rng) {
    Image img = make_image(n, n);
    auto& d = img.mutable_data();
    double c0[3], c1[3];
    for (int c = 0; c < 3; ++c) {
        c0[c] = uniform(rng, 0.1, 0.6);
        c1[c] = uniform(rng, 0.1, 0.6);
    }
    const double theta = uniform(rng, 0, 2 * std::numbers::pi);
    const double nf = static_cast<double>(n);
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const double t =
                0.5 + 0.5 * ((x / nf - 0.5) * std::cos(theta) + (y / nf - 0.5) * std::sin(theta)) * std::numbers::sqrt2;
            for (int c = 0; c < 3; ++c) d[(c * n + y) * n + x] = static_cast<float>(c0[c] + (c1[c] - c0[c]) * t);
        }
    const std::size_t count = 6 + static_cast<std::size_t>(unit_uniform(rng) * 6);
    for (std::size_t b = 0; b < count; ++b) {
        const double cx = uniform(rng, 0, nf), cy = uniform(rng, 0, nf);
        const double r = uniform(rng, nf / 16, nf / 5);
        double col[3];
        for (auto& v : col) v = uniform(rng, 0.0, 0.85);
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                const double dist = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
                const double a = std::clamp(r + 0.5 - dist, 0.0, 1.0);
                if (a == 0) continue;
                for (int c = 0; c < 3; ++c) {
                    float& p = d[(c * n + y) * n + x];
                    p = static_cast<float>(p * (1 - a) + col[c] * a);
                }
            }
    }
    return img;
}

}  // namespace detail

// Deterministic procedural image in [0,1]. `multiple` is the extent granularity
// the model needs.
inline Image synth_clean(CleanKind kind, std::size_t size, std::uint64_t seed, std::size_t multiple = 8) {
    detail::check_size(size, multiple);
    std::mt19937_64 rng(seed);
    const std::size_t n = size;
    switch (kind) {
        case CleanKind::Ramp: {
            Image img = make_image(n, n);
            auto& d = img.mutable_data();
            const float den = static_cast<float>(n * n - 1);
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t i = 0; i < n * n; ++i) d[c * n * n + i] = static_cast<float>(i) / den;
            return img;
        }
        case CleanKind::Checker: return detail::checker(n, rng);
        case CleanKind::Blobs: return detail::blobs(n, rng);
        case CleanKind::Mixed: {
            Image a = detail::blobs(n, rng);
            Image b = detail::checker(n, rng);
            auto& d = a.mutable_data();
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = 0.75f * d[i] + 0.25f * b[i];
            return a;
        }
    }
    throw Error("synth_clean: bad kind");
}

struct Range {
    double lo, hi;
};

struct RainParams {
    double density = 5000;                   // streaks per megapixel
    std::optional<std::size_t> streaks;      // explicit count, overrides density
    Range angle_deg{60, 120};                // from horizontal
    Range length_px{8, 20};
    Range width_px{1, 2};
    Range intensity{0.3, 0.6};
    std::uint64_t seed = 0;

    std::size_t count_for(std::size_t h, std::size_t w) const {
        if (streaks) return *streaks;
        return static_cast<std::size_t>(std::llround(density * static_cast<double>(h * w) / 1e6));
    }

    void validate() const {
        for (const auto* r : {&angle_deg, &length_px, &width_px, &intensity})
            if (!(r->lo <= r->hi)) throw Error("rain: empty range");
        if (!(intensity.lo > 0 && intensity.hi <= 1)) throw Error("rain: intensity must lie in (0,1]");
        if (!(length_px.lo >= 0 && width_px.lo > 0)) throw Error("rain: length/width must be positive");
        if (!(density >= 0)) throw Error("rain: density must be non-negative");
    }
};

// Non-negative single-channel rain layer [1,1,H,W]: a sum of anti-aliased
// capsules (line segments with round caps).
inline Tensor<float> rain_layer(std::size_t h, std::size_t w, const RainParams& rp) {
    rp.validate();
    Tensor<float> r(Shape{1, 1, h, w});
    auto& d = r.mutable_data();
    std::mt19937_64 rng(rp.seed);
    const std::size_t n = rp.count_for(h, w);
    for (std::size_t k = 0; k < n; ++k) {
        const double cx = uniform(rng, 0, static_cast<double>(w));
        const double cy = uniform(rng, 0, static_cast<double>(h));
        const double ang = uniform(rng, rp.angle_deg.lo, rp.angle_deg.hi) * std::numbers::pi / 180.0;
        const double len = uniform(rng, rp.length_px.lo, rp.length_px.hi);
        const double half_w = uniform(rng, rp.width_px.lo, rp.width_px.hi) / 2;
        const double inten = uniform(rng, rp.intensity.lo, rp.intensity.hi);
        // image y grows downwards; angles are measured counter-clockwise
        const double dx = std::cos(ang) * len / 2, dy = -std::sin(ang) * len / 2;
        const double x0 = cx - dx, y0 = cy - dy, x1 = cx + dx, y1 = cy + dy;
        const double pad = half_w + 1;
        const auto lo_x = static_cast<std::ptrdiff_t>(std::floor(std::min(x0, x1) - pad));
        const auto hi_x = static_cast<std::ptrdiff_t>(std::ceil(std::max(x0, x1) + pad));
        const auto lo_y = static_cast<std::ptrdiff_t>(std::floor(std::min(y0, y1) - pad));
        const auto hi_y = static_cast<std::ptrdiff_t>(std::ceil(std::max(y0, y1) + pad));
        const double sx = x1 - x0, sy = y1 - y0, ss = sx * sx + sy * sy;
        for (auto y = std::max<std::ptrdiff_t>(lo_y, 0); y < std::min<std::ptrdiff_t>(hi_y, h); ++y)
            for (auto x = std::max<std::ptrdiff_t>(lo_x, 0); x < std::min<std::ptrdiff_t>(hi_x, w); ++x) {
                const double px = x + 0.5 - x0, py = y + 0.5 - y0;
                const double t = ss > 0 ? std::clamp((px * sx + py * sy) / ss, 0.0, 1.0) : 0.0;
                const double dist = std::hypot(px - t * sx, py - t * sy);
                const double cov = std::clamp(half_w + 0.5 - dist, 0.0, 1.0);
                if (cov > 0) d[static_cast<std::size_t>(y) * w + x] += static_cast<float>(inten * cov);
            }
    }
    return r;
}

// rainy = clamp(clean + R, 0, 1), R added equally to every channel.
inline SamplePair add_rain(const Image& clean, const RainParams& rp, std::string id = {}) {
    check_image(clean, "add_rain");
    const std::size_t h = clean.dim(2), w = clean.dim(3);
    const auto r = rain_layer(h, w, rp);
    Image rainy = clean.detach();
    auto& d = rainy.mutable_data();
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < h * w; ++i) {
            float& p = d[c * h * w + i];
            if (r[i] != 0.0f) p = std::min(1.0f, p + r[i]);
        }
    return {rainy, clean.detach(), std::move(id)};
}

// Full-range BT.601 luma histogram over [0,1], normalised to sum 1.
inline std::vector<double> y_histogram(const Image& img, std::size_t bins = 256) {
    check_image(img, "y_histogram");
    if (bins == 0) throw Error("y_histogram: bins must be positive");
    const std::size_t hw = img.dim(2) * img.dim(3);
    const auto& d = img.data();
    std::vector<double> h(bins, 0.0);
    for (std::size_t i = 0; i < hw; ++i) {
        // integer weights summing to 1000, so grey maps exactly onto itself
        const double y = (299.0 * d[i] + 587.0 * d[hw + i] + 114.0 * d[2 * hw + i]) / 1000.0;
        const auto b = static_cast<std::size_t>(std::clamp(y, 0.0, 1.0) * static_cast<double>(bins));
        h[std::min(b, bins - 1)] += 1.0;
    }
    for (auto& v : h) v /= static_cast<double>(hw);
    return h;
}

// Pearson correlation of two bin vectors.
inline double hist_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw Error("hist_correlation: bin counts differ");
    if (a.empty()) throw Error("hist_correlation: empty histograms");
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0 || sbb == 0) throw Error("hist_correlation: zero-variance histogram");
    return sab / std::sqrt(saa * sbb);
}

// Bilinear round trip through the 1/s grid.
inline Image down_up(const Image& img, std::size_t s) {
    NoGradGuard<float> guard;
    return bilinear_scale(bilinear_scale(img, 1, s), s, 1);
}

// n crops with one random window per crop shared by rainy and clean.
inline std::vector<SamplePair> crop_patches(const SamplePair& p, std::size_t patch, std::size_t n, std::uint64_t seed,
                                            std::size_t multiple = 8) {
    check_image(p.rainy, "crop_patches");
    if (p.rainy.shape() != p.clean.shape()) throw Error("crop_patches: rainy and clean extents differ");
    detail::check_size(patch, multiple);
    const std::size_t h = p.rainy.dim(2), w = p.rainy.dim(3);
    if (patch > h || patch > w)
        throw Error("crop_patches: patch " + std::to_string(patch) + " exceeds image " + std::to_string(h) + "x" +
                    std::to_string(w));
    std::mt19937_64 rng(seed);
    NoGradGuard<float> guard;
    std::vector<SamplePair> out;
    for (std::size_t k = 0; k < n; ++k) {
        const auto y = static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(h - patch + 1));
        const auto x = static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(w - patch + 1));
        auto cut = [&](const Image& im) { return slice(slice(im, 2, y, patch), 3, x, patch); };
        out.push_back({cut(p.rainy), cut(p.clean), p.id + "@" + std::to_string(y) + "," + std::to_string(x)});
    }
    return out;
}

// ---- manifests -------------------------------------------------------------

inline constexpr const char* kManifestName = "manifest.tsv";

struct ManifestEntry {
    std::string id, rainy, clean;
};

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open manifest " + path);
    std::vector<ManifestEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        ManifestEntry e;
        std::istringstream ss(line);
        if (!std::getline(ss, e.id, '\t') || !std::getline(ss, e.rainy, '\t') || !std::getline(ss, e.clean) ||
            e.clean.find('\t') != std::string::npos)
            throw Error("manifest " + path + ":" + std::to_string(lineno) + ": expected id<TAB>rainy<TAB>clean");
        out.push_back(std::move(e));
    }
    return out;
}

// Writes rainy/<id>.png, clean/<id>.png and the manifest into `dir`.
inline void write_dataset(const std::string& dir, const std::vector<SamplePair>& pairs) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "rainy", ec);
    fs::create_directories(fs::path(dir) / "clean", ec);
    if (!fs::is_directory(fs::path(dir) / "rainy") || !fs::is_directory(fs::path(dir) / "clean"))
        throw Error("cannot create dataset directory " + dir);
    std::ofstream m(fs::path(dir) / kManifestName, std::ios::binary | std::ios::trunc);
    if (!m) throw Error("cannot write manifest in " + dir);
    for (const auto& p : pairs) {
        const std::string r = "rainy/" + p.id + ".png", c = "clean/" + p.id + ".png";
        save_png((fs::path(dir) / r).string(), p.rainy);
        save_png((fs::path(dir) / c).string(), p.clean);
        m << p.id << '\t' << r << '\t' << c << '\n';
    }
}

// Loads every pair named in <dir>/manifest.tsv; relative paths resolve
// against `dir`.
inline std::vector<SamplePair> load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    const auto entries = read_manifest((root / kManifestName).string());
    std::vector<SamplePair> out;
    for (const auto& e : entries) {
        auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : root / p; };
        SamplePair sp{load_png(resolve(e.rainy).string()), load_png(resolve(e.clean).string()), e.id};
        if (sp.rainy.shape() != sp.clean.shape()) throw Error("dataset pair " + e.id + ": rainy and clean extents differ");
        out.push_back(std::move(sp));
    }
    return out;
}

// Synthetic dataset: clean image kind cycles through `kinds`, sample i uses
// seeds derived from (seed, i).
inline std::vector<SamplePair> synth_dataset(std::size_t count, std::size_t size, std::uint64_t seed,
                                             const RainParams& rain, const std::vector<CleanKind>& kinds,
                                             std::size_t multiple = 8) {
    if (kinds.empty()) throw Error("synth_dataset: no image kinds");
    std::vector<SamplePair> out;
    for (std::size_t i = 0; i < count; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "%05zu", i);
        RainParams rp = rain;
        rp.seed = mix_seed(seed, 2 * i + 1);
        out.push_back(add_rain(synth_clean(kinds[i % kinds.size()], size, mix_seed(seed, 2 * i), multiple), rp, id));
    }
    return out;
}

}  // namespace elf

#endif  // ELF_DATA_HPP
