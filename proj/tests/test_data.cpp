#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "elf/data.hpp"

using namespace elf;
using Catch::Matchers::WithinAbs;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("elf_test_data_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

double mean_of(const Image& img) {
    double s = 0;
    for (float v : img.data()) s += v;
    return s / static_cast<double>(img.size());
}

}  // namespace

TEST_CASE("procedural clean images") {
    auto ramp = synth_clean(CleanKind::Ramp, 16, 0);
    CHECK(ramp.shape() == Shape{1, 3, 16, 16});
    CHECK(ramp[0] == 0.0f);
    CHECK(ramp[255] == 1.0f);
    for (auto k : {CleanKind::Ramp, CleanKind::Checker, CleanKind::Blobs, CleanKind::Mixed}) {
        auto a = synth_clean(k, 32, 5), b = synth_clean(k, 32, 5);
        CHECK(a.data() == b.data());
        for (float v : a.data()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
    CHECK_THAT(mean_of(synth_clean(CleanKind::Checker, 64, 3)), WithinAbs(0.5, 0.02));
    CHECK(synth_clean(CleanKind::Blobs, 32, 1).data() != synth_clean(CleanKind::Blobs, 32, 2).data());
    CHECK_THROWS_AS(synth_clean(CleanKind::Ramp, 12, 0), Error);
    CHECK_THROWS_AS(parse_clean_kind("stripes"), Error);
}

TEST_CASE("rain synthesis") {
    const auto clean = synth_clean(CleanKind::Blobs, 64, 1);
    RainParams none;
    none.streaks = 0;
    CHECK(add_rain(clean, none).rainy.data() == clean.data());

    RainParams rp;
    rp.seed = 9;
    const auto p = add_rain(clean, rp, "x");
    CHECK(p.id == "x");
    CHECK(p.clean.data() == clean.data());
    CHECK(p.rainy.data() != clean.data());
    for (std::size_t i = 0; i < clean.size(); ++i) {
        CHECK(p.rainy[i] - clean[i] >= -1e-6f);
        CHECK(p.rainy[i] <= 1.0f);
    }
    CHECK(add_rain(clean, rp).rainy.data() == p.rainy.data());

    RainParams bad;
    bad.intensity = {0.5, 0.2};
    CHECK_THROWS_AS(add_rain(clean, bad), Error);
}

TEST_CASE("mean rain increment matches the expected streak coverage") {
    // On a black background nothing saturates, so the mean increase is the
    // covered area times intensity over the pixel count.
    const std::size_t n = 128;
    const auto black = make_image(n, n);
    RainParams rp;
    double acc = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        rp.seed = seed;
        const auto p = add_rain(black, rp);
        acc += mean_of(p.rainy) - mean_of(p.clean);
    }
    acc /= 100;
    const double e_lwi = (rp.length_px.lo + rp.length_px.hi) / 2 * (rp.width_px.lo + rp.width_px.hi) / 2 *
                         (rp.intensity.lo + rp.intensity.hi) / 2;
    const double expected = static_cast<double>(rp.count_for(n, n)) * e_lwi / static_cast<double>(n * n);
    CHECK(acc > 0.7 * expected);
    CHECK(acc < 1.3 * expected);
}

TEST_CASE("luma histogram") {
    auto h = y_histogram(make_image(8, 8, 0.5f));
    CHECK(std::count_if(h.begin(), h.end(), [](double v) { return v != 0; }) == 1);
    CHECK(h[128] == 1.0);
    RainParams rp;
    rp.seed = 2;
    auto h2 = y_histogram(add_rain(synth_clean(CleanKind::Mixed, 64, 3), rp).rainy);
    double s = 0;
    for (double v : h2) s += v;
    CHECK_THAT(s, WithinAbs(1.0, 1e-9));
    CHECK(y_histogram(make_image(4, 4), 16).size() == 16);
}

TEST_CASE("histogram correlation") {
    std::vector<double> a{0.1, 0.4, 0.2, 0.3};
    CHECK_THAT(hist_correlation(a, a), WithinAbs(1.0, 1e-12));
    std::vector<double> r(a.rbegin(), a.rend());
    CHECK(hist_correlation(a, r) < 0);
    CHECK_THAT(hist_correlation({1, 0}, {0.7, 0.3}), WithinAbs(1.0, 1e-12));
    CHECK_THROWS_AS(hist_correlation({0.5, 0.5}, {0.2, 0.8}), Error);
    CHECK_THROWS_AS(hist_correlation({1, 2}, {1, 2, 3}), Error);
}

TEST_CASE("down-up round trip keeps the luma distribution") {
    RainParams rp;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        rp.seed = seed + 100;
        const auto img = add_rain(synth_clean(CleanKind::Blobs, 64, seed), rp).rainy;
        const auto rt = down_up(img, 2);
        CHECK(rt.shape() == img.shape());
        CHECK(hist_correlation(y_histogram(img), y_histogram(rt)) >= 0.85);
    }
}

TEST_CASE("PNG round trip") {
    const auto dir = scratch("png");
    std::mt19937_64 rng(1);
    Image img = make_image(7, 9);
    for (auto& v : img.mutable_data()) v = static_cast<float>(uniform(rng, 0, 1));
    const auto p1 = (dir / "a.png").string(), p2 = (dir / "b.png").string();
    save_png(p1, img);
    const auto back = load_png(p1);
    REQUIRE(back.shape() == img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(back[i] - img[i]) <= 1.0f / 510 + 1e-7f);
    save_png(p2, back);
    CHECK(load_png(p2).data() == back.data());

    // a single-channel file replicates into all three channels
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    pi.width = 3;
    pi.height = 2;
    pi.format = PNG_FORMAT_GRAY;
    const std::vector<png_byte> grey{0, 51, 102, 153, 204, 255};
    REQUIRE(png_image_write_to_file(&pi, (dir / "g.png").c_str(), 0, grey.data(), 0, nullptr));
    const auto g = load_png((dir / "g.png").string());
    REQUIRE(g.shape() == Shape{1, 3, 2, 3});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 6; ++i) CHECK(g[c * 6 + i] == static_cast<float>(grey[i]) / 255.0f);

    CHECK_THROWS_AS(load_png((dir / "missing.png").string()), Error);
    std::ofstream(dir / "junk.png") << "not a png";
    CHECK_THROWS_AS(load_png((dir / "junk.png").string()), Error);
}

TEST_CASE("patch cropping") {
    RainParams rp;
    rp.seed = 4;
    const auto pair = add_rain(synth_clean(CleanKind::Blobs, 32, 1), rp, "p");
    auto whole = crop_patches(pair, 32, 1, 7);
    CHECK(whole[0].rainy.data() == pair.rainy.data());
    CHECK(whole[0].clean.data() == pair.clean.data());

    auto a = crop_patches(pair, 16, 3, 7), b = crop_patches(pair, 16, 3, 7);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(a[k].rainy.shape() == Shape{1, 3, 16, 16});
        CHECK(a[k].rainy.data() == b[k].rainy.data());
        CHECK(a[k].id == b[k].id);
    }
    CHECK_THROWS_AS(crop_patches(pair, 40, 1, 0), Error);
    CHECK_THROWS_AS(crop_patches(pair, 12, 1, 0), Error);

    RainParams none;
    none.streaks = 0;
    const auto dry = add_rain(synth_clean(CleanKind::Mixed, 32, 2), none);
    for (const auto& c : crop_patches(dry, 8, 5, 3)) CHECK(c.rainy.data() == c.clean.data());
}

TEST_CASE("datasets on disk") {
    const auto dir = scratch("set");
    RainParams rp;
    const auto pairs = synth_dataset(3, 16, 7, rp, {CleanKind::Blobs, CleanKind::Checker});
    CHECK(pairs[0].id == "00000");
    CHECK(pairs[2].id == "00002");
    write_dataset(dir.string(), pairs);
    const auto m = read_manifest((dir / kManifestName).string());
    REQUIRE(m.size() == 3);
    CHECK(m[1].rainy == "rainy/00001.png");
    const auto loaded = load_dataset(dir.string());
    REQUIRE(loaded.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(loaded[i].id == pairs[i].id);
        CHECK(loaded[i].rainy.shape() == pairs[i].rainy.shape());
    }
    CHECK(synth_dataset(3, 16, 7, rp, {CleanKind::Blobs, CleanKind::Checker})[1].rainy.data() == pairs[1].rainy.data());
    CHECK_THROWS_AS(load_dataset((dir / "nowhere").string()), Error);
    std::ofstream(dir / "bad.tsv") << "only\tone\n";
    CHECK_THROWS_AS(read_manifest((dir / "bad.tsv").string()), Error);
}
