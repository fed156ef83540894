// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <sys/wait.h>

#include <boost/multiprecision/cpp_int.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "elf/elf.hpp"

using namespace elf;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
    std::printf("%s  %d  %-28s %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
    std::fflush(stdout);
    failures += !ok;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

template <class F>
void criterion(int id, const char* name, F body) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
        auto [ok, detail] = body();
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report(id, name, ok, detail + fmt(" [%.1f s]", s));
    } catch (const std::exception& e) {
        report(id, name, false, std::string("error: ") + e.what());
    }
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

int cli(const std::string& args) {
    const std::string cmd = std::string(ELF_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

using Result = std::pair<bool, std::string>;

// 1. Finite-difference gradients for every layer and the full model.
Result gradient_suite() {
    const auto rep = gradcheck("all");
    double layer = 0, composed = 0;
    for (const auto& e : rep.entries) {
        double& m = e.tolerance == kLayerTolerance ? layer : composed;
        m = std::max(m, e.max_rel_err);
    }
    const bool neg_flagged = !gradcheck_negative_control().pass();
    const bool ok = rep.pass() && rep.seconds < 120 && neg_flagged;
    return {ok, fmt("%zu tensors, layer max %.2e (<1e-4), composed max %.2e (<1e-3), %.1f s (<120), control %s",
                    rep.entries.size(), layer, composed, rep.seconds, neg_flagged ? "flagged" : "MISSED")};
}

// 2. Every attention map in a forward pass is (C/h)x(C/h), row-stochastic,
//    and its shape does not depend on the image extent.
Result attention_invariants() {
    bool ok = true;
    std::size_t maps = 0;
    double worst = 0;
    for (const auto& cfg : {ModelConfig::desk(), ModelConfig::elf_lw()}) {
        ElfModel<float> m(cfg, 1);
        m.params().randomize(2, 0.3);
        std::vector<Shape> shapes[2];
        for (int k = 0; k < 2; ++k) {
            const std::size_t n = k ? 64 : 32;
            RainParams rp;
            rp.seed = 3;
            const auto x = add_rain(synth_clean(CleanKind::Mixed, n, 4), rp).rainy;
            AttentionRecorder<float> rec;
            NoGradGuard<float> g;
            m.forward(x);
            const std::size_t d = cfg.channels / cfg.heads;
            for (const auto& a : rec.maps()) {
                shapes[k].push_back(a.shape());
                ok &= a.shape() == Shape{1, cfg.heads, d, d};
                for (std::size_t r = 0; r < a.size() / d; ++r) {
                    double s = 0;
                    for (std::size_t c = 0; c < d; ++c) {
                        ok &= a[r * d + c] >= 0;
                        s += a[r * d + c];
                    }
                    worst = std::max(worst, std::abs(s - 1));
                }
                ++maps;
            }
        }
        ok &= !shapes[0].empty() && shapes[0] == shapes[1];
    }
    ok &= worst <= 1e-6;
    return {ok, fmt("%zu maps over desk+ELF-LW at 32/64 px, max |row sum - 1| %.2e", maps, worst)};
}

// 3. rain_pred_sub + derained_sub == rainy_sub, bit for bit.
Result additive_identity() {
    std::size_t passes = 0, mismatches = 0;
    auto check = [&](auto tag, std::uint64_t seed) {
        using T = decltype(tag);
        ElfModel<T> m(ModelConfig::desk(), seed);
        if (seed % 2) m.params().randomize(seed, 0.3);
        RainParams rp;
        rp.seed = seed;
        const auto img = add_rain(synth_clean(CleanKind::Mixed, 32, seed), rp).rainy;
        Tensor<T> x(img.shape());
        for (std::size_t i = 0; i < img.size(); ++i) x.mutable_data()[i] = static_cast<T>(img[i]);
        NoGradGuard<T> g;
        const auto out = m.forward(x);
        const auto back = add(out.rain_pred_sub, out.derained_sub);
        for (std::size_t i = 0; i < back.size(); ++i) mismatches += back[i] != out.rainy_sub[i];
        ++passes;
    };
    for (std::uint64_t s = 1; s <= 6; ++s) {
        check(float{}, s);
        check(double{}, s);
    }
    return {mismatches == 0, fmt("%zu forward passes (float and double), %zu mismatching elements", passes, mismatches)};
}

// 4. Each branch loss at a perfect prediction is epsilon + alpha.
Result loss_fixed_point() {
    const auto cfg = ModelConfig::elf();
    const auto clean = synth_clean(CleanKind::Blobs, 64, 9);
    Tensor<double> c(clean.shape());
    for (std::size_t i = 0; i < clean.size(); ++i) c.mutable_data()[i] = clean[i];
    DerainOutputs<double> out;
    out.derained_sub = bilinear_scale(c, 1, cfg.sample_factor);
    out.derained_full = c;
    const auto l = loss_joint(out, c, cfg);
    const double idn = l.idn.item(), brn = l.brn.item();
    const bool ok = std::abs(idn + 0.149) <= 1e-6 && std::abs(brn + 0.149) <= 1e-6;
    return {ok, fmt("IDN %.9f, BRN %.9f (target -0.149 +- 1e-6)", idn, brn)};
}

// 5. Overfitting four small pairs gains at least 5 dB over the rainy input.
Result overfit() {
    const std::size_t steps = 600;
    const auto data = synth_dataset(4, 64, 2024, RainParams{}, {CleanKind::Mixed});
    auto mean_psnr = [&](const std::function<Image(const Image&)>& f) {
        double s = 0;
        for (const auto& p : data) s += psnr(f(p.rainy), p.clean);
        return s / static_cast<double>(data.size());
    };
    const double base = mean_psnr([](const Image& x) { return x; });
    ElfModel<float> m(ModelConfig::desk(), 0);
    TrainOptions o;
    o.batch = 4;
    o.patch = 0;
    o.max_steps = steps;
    Trainer<float> t(m, data, o);
    t.run();
    const double after = mean_psnr([&](const Image& x) {
        NoGradGuard<float> g;
        return clamp(m.forward(x).derained_full, 0.0f, 1.0f);
    });
    return {after >= base + 5.0,
            fmt("desk model, 4x 64px pairs, %zu steps: %.2f dB -> %.2f dB (gain %.2f, need >= 5)", steps, base, after,
                after - base)};
}

// 6. Parameter budgets.
Result param_counts() {
    const double elf = static_cast<double>(count_params(ModelConfig::elf()));
    const double lw = static_cast<double>(count_params(ModelConfig::elf_lw()));
    auto sym = ModelConfig::elf();
    sym.dsc_encoder = false;
    const double saving = 1.0 - elf / static_cast<double>(count_params(sym));
    const bool ok = std::abs(elf / 1.532e6 - 1) <= 0.30 && std::abs(lw / 0.566e6 - 1) <= 0.30 && lw < elf &&
                    saving >= 0.05 && saving <= 0.11;
    return {ok, fmt("ELF %.0f (%.1f%% vs 1.532M), ELF-LW %.0f (%.1f%% vs 0.566M), separable encoder saves %.2f%%", elf,
                    100 * (elf / 1.532e6 - 1), lw, 100 * (lw / 0.566e6 - 1), 100 * saving)};
}

// 7. Down/up sampling keeps the luma histogram.
Result histogram_property() {
    const std::size_t n = 20;
    const auto data = synth_dataset(n, 64, 77, RainParams{}, {CleanKind::Blobs});
    double sum = 0, lo = 1;
    for (const auto& p : data) {
        const double r = hist_correlation(y_histogram(p.rainy), y_histogram(down_up(p.rainy, 2)));
        sum += r;
        lo = std::min(lo, r);
    }
    const double mean = sum / static_cast<double>(n);
    return {mean >= 0.9 && lo >= 0.85, fmt("%zu rainy images: mean %.4f (>= 0.9), min %.4f (>= 0.85)", n, mean, lo)};
}

// 8. Learning rate against exact rational arithmetic.
Result lr_schedule() {
    using boost::multiprecision::cpp_rational;
    const AdamOptions o;
    double worst = 0;
    std::size_t bad = 0;
    for (std::size_t e = 0; e <= 600; ++e) {
        cpp_rational exact(2, 10000);
        for (std::size_t k = 0; k < e / 65; ++k) exact *= cpp_rational(4, 5);
        const double got = learning_rate(o, e);
        const double near = static_cast<double>(exact);
        const double ulp = std::nextafter(near, INFINITY) - near;
        cpp_rational diff = cpp_rational(got) - exact;
        if (diff < 0) diff = -diff;
        const double u = static_cast<double>(diff / cpp_rational(ulp));
        worst = std::max(worst, u);
        bad += u > 1.0;
    }
    return {bad == 0, fmt("601 epochs, worst error %.3f ulp (<= 1), lr(600) = %.6g", worst, learning_rate(o, 600))};
}

// 9. Same-seed runs, checkpoint round trip, repeatable inference.
Result determinism() {
    const auto root = fs::temp_directory_path() / "elf_acceptance";
    fs::remove_all(root);
    const auto data = synth_dataset(3, 32, 5, RainParams{}, {CleanKind::Mixed});
    TrainOptions o;
    o.batch = 2;
    o.patch = 24;
    o.seed = 4;
    o.max_steps = 5;
    std::vector<LossRecord> curves[2];
    for (int k = 0; k < 2; ++k) {
        ElfModel<float> m(ModelConfig::desk(), 3);
        curves[k] = Trainer<float>(m, data, o).run((root / ("run" + std::to_string(k))).string());
    }
    bool same_curve = curves[0].size() == 5 && curves[1].size() == 5;
    for (std::size_t i = 0; same_curve && i < 5; ++i) same_curve = curves[0][i].total == curves[1][i].total;
    same_curve &= slurp(root / "run0" / "loss.csv") == slurp(root / "run1" / "loss.csv");

    ElfModel<float> reload(ModelConfig::desk(), 77);
    load_into(reload.params(), read_checkpoint((root / "run0" / "model.ckpt").string()));
    write_checkpoint((root / "again.ckpt").string(), to_checkpoint(reload.params()));
    const bool ckpt_same = slurp(root / "run0" / "model.ckpt") == slurp(root / "again.ckpt");

    // inference through the command-line tool
    bool derain_same = false;
    const auto ds = root / "data", run = root / "cli_run";
    if (cli("synth --out " + ds.string() + " --count 2 --size 32 --seed 1") == 0 &&
        cli("train --data " + ds.string() + " --out " + run.string() +
            " --set train.max_steps=3 --set train.patch=24 --quiet") == 0 &&
        cli("derain --ckpt " + (run / "model.ckpt").string() + " --in " + (ds / "rainy").string() + " --out " +
            (root / "d1").string() + " --dump-intermediates") == 0 &&
        cli("derain --ckpt " + (run / "model.ckpt").string() + " --in " + (ds / "rainy").string() + " --out " +
            (root / "d2").string() + " --dump-intermediates") == 0) {
        derain_same = true;
        std::size_t files = 0;
        for (const auto& e : fs::directory_iterator(root / "d1")) {
            if (!e.is_regular_file()) continue;
            ++files;
            derain_same &= slurp(e.path()) == slurp(root / "d2" / e.path().filename());
        }
        derain_same &= files >= 4;
    }
    return {same_curve && ckpt_same && derain_same,
            fmt("loss curves %s, checkpoint round trip %s, derain outputs %s", same_curve ? "identical" : "DIFFER",
                ckpt_same ? "byte-identical" : "DIFFERS", derain_same ? "byte-identical" : "DIFFER")};
}

}  // namespace

int main() {
    std::printf("elf acceptance\n");
    criterion(1, "gradient suite", gradient_suite);
    criterion(2, "attention invariants", attention_invariants);
    criterion(3, "additive decomposition", additive_identity);
    criterion(4, "loss fixed point", loss_fixed_point);
    criterion(5, "overfit smoke test", overfit);
    criterion(6, "parameter counts", param_counts);
    criterion(7, "histogram after down/up", histogram_property);
    criterion(8, "learning-rate schedule", lr_schedule);
    criterion(9, "determinism and persistence", determinism);
    std::printf("%d of 9 criteria failed\n", failures);
    return failures ? 1 : 0;
}
