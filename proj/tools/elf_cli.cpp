// elf: command-line front end (synth, train, derain, eval, gradcheck, params,
// histcheck). Exit status is 0 iff the command's contract was met.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "elf/elf.hpp"

namespace fs = std::filesystem;
using namespace elf;

namespace {

constexpr const char* kVersion = "elf 0.1.0";

std::vector<std::pair<std::string, std::string>> split_assignments(const std::vector<std::string>& items,
                                                                   const std::string& prefix) {
    std::vector<std::pair<std::string, std::string>> kv;
    for (const auto& item : items) {
        std::stringstream ss(item);
        std::string part;
        while (std::getline(ss, part, ',')) {
            const auto eq = part.find('=');
            if (eq == std::string::npos || eq == 0) throw Error("expected key=value, got '" + part + "'");
            kv.emplace_back(prefix + part.substr(0, eq), part.substr(eq + 1));
        }
    }
    return kv;
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + p.string());
    f << s;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
    std::string out;
    std::size_t count = 20, size = 64;
    std::uint64_t seed = 0;
    std::vector<std::string> rain;
    std::string kinds = "blobs";
};

int cmd_synth(const SynthArgs& a) {
    auto kv = split_assignments(a.rain, "rain.");
    kv.emplace_back("data.kinds", a.kinds);
    kv.emplace_back("data.size", std::to_string(a.size));
    kv.emplace_back("train.seed", std::to_string(a.seed));
    const RunConfig cfg = resolve_config(kv);
    const auto pairs = synth_dataset(a.count, a.size, a.seed, cfg.rain, cfg.kinds);
    write_dataset(a.out, pairs);
    std::string ini = "[synth]\ncount = " + std::to_string(a.count) + "\nsize = " + std::to_string(a.size) +
                      "\nseed = " + std::to_string(a.seed) + "\nkinds = " + a.kinds + "\n\n";
    const std::string full = to_ini(cfg);
    ini += full.substr(full.find("[rain]"));
    write_text(fs::path(a.out) / "synth.ini", ini);
    std::cout << "wrote " << pairs.size() << " pairs to " << a.out << "\n";
    return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
    std::string config, data, out;
    std::vector<std::string> set;
    bool resume = false;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
    std::vector<std::pair<std::string, std::string>> kv;
    if (!a.config.empty()) kv = read_ini_file(a.config);
    else kv.emplace_back("model.variant", "desk");
    for (auto& p : split_assignments(a.set, "")) kv.push_back(p);
    const RunConfig cfg = resolve_config(kv);
    auto data = load_dataset(a.data);

    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "config.ini", to_ini(cfg));
    write_text(fs::path(a.out) / "run.txt", std::string(kVersion) + "\ndata = " + a.data +
                                                "\nseed = " + std::to_string(cfg.train.seed) +
                                                "\nresume = " + (a.resume ? "true" : "false") + "\n");

    ElfModel<float> model(cfg.model, cfg.train.seed);
    Trainer<float> trainer(model, std::move(data), cfg.train, cfg.optim);
    if (a.resume) {
        trainer.resume(a.out);
        std::cout << "resumed at step " << trainer.step_count() << "\n";
    }
    const auto curve = trainer.run(a.out, [&](const LossRecord& r) {
        if (!a.quiet && (r.step % 50 == 0 || r.step == trainer.total_steps())) std::cout << to_csv(r) << "\n";
    });
    std::cout << "trained to step " << trainer.step_count() << "; checkpoint " << (fs::path(a.out) / "model.ckpt").string()
              << "\n";
    return 0;
}

// ---- derain / eval ---------------------------------------------------------

ElfModel<float> load_model(const std::string& ckpt) {
    const fs::path cfg_path = fs::path(ckpt).parent_path() / "config.ini";
    if (!fs::exists(cfg_path)) throw Error("no config.ini next to checkpoint " + ckpt);
    const RunConfig cfg = resolve_config(read_ini_file(cfg_path.string()));
    ElfModel<float> model(cfg.model);
    load_into(model.params(), read_checkpoint(ckpt));
    return model;
}

// Edge-replicates the image up to multiples of m.
Image pad_to_multiple(const Image& img, std::size_t m) {
    const std::size_t h = img.dim(2), w = img.dim(3);
    const std::size_t ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
    if (ph == h && pw == w) return img;
    Image out = make_image(ph, pw);
    auto& d = out.mutable_data();
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < ph; ++y)
            for (std::size_t x = 0; x < pw; ++x)
                d[(c * ph + y) * pw + x] = img[(c * h + std::min(y, h - 1)) * w + std::min(x, w - 1)];
    return out;
}

Image crop(const Image& img, std::size_t h, std::size_t w) {
    if (img.dim(2) == h && img.dim(3) == w) return img;
    NoGradGuard<float> g;
    return slice(slice(img, 2, 0, h), 3, 0, w);
}

// Per-channel min-max to [0,1]; constant channels map to 0.
Tensor<float> minmax_channels(const Tensor<float>& t) {
    Tensor<float> out(t.shape());
    const std::size_t c = t.dim(1), hw = t.dim(2) * t.dim(3);
    for (std::size_t k = 0; k < c; ++k) {
        float lo = t[k * hw], hi = t[k * hw];
        for (std::size_t i = 0; i < hw; ++i) {
            lo = std::min(lo, t[k * hw + i]);
            hi = std::max(hi, t[k * hw + i]);
        }
        for (std::size_t i = 0; i < hw; ++i)
            out.mutable_data()[k * hw + i] = hi > lo ? (t[k * hw + i] - lo) / (hi - lo) : 0.0f;
    }
    return out;
}

// Feature maps as a grey grid of per-channel min-max normalised tiles.
void save_feature_grid(const fs::path& p, const Tensor<float>& f) {
    const auto n = minmax_channels(f);
    const std::size_t c = f.dim(1), h = f.dim(2), w = f.dim(3);
    const std::size_t cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(c))));
    const std::size_t rows = (c + cols - 1) / cols;
    const std::size_t gh = rows * (h + 1) - 1, gw = cols * (w + 1) - 1;
    std::vector<png_byte> buf(gh * gw * 3, 0);
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t gy = (k / cols) * (h + 1) + y, gx = (k % cols) * (w + 1) + x;
                const auto v = quantize(n[(k * h + y) * w + x]);
                for (std::size_t ch = 0; ch < 3; ++ch) buf[(gy * gw + gx) * 3 + ch] = v;
            }
    save_png_bytes(p.string(), gh, gw, buf);
}

std::vector<fs::path> list_inputs(const std::string& in) {
    std::vector<fs::path> out;
    if (fs::is_directory(in)) {
        for (const auto& e : fs::directory_iterator(in))
            if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
        std::sort(out.begin(), out.end());
    } else if (fs::is_regular_file(in)) {
        out.emplace_back(in);
    } else {
        throw Error("input " + in + " does not exist");
    }
    if (out.empty()) throw Error("no PNG images in " + in);
    return out;
}

struct DerainArgs {
    std::string ckpt, in, out;
    bool dump = false;
};

int cmd_derain(const DerainArgs& a) {
    const auto model = load_model(a.ckpt);
    fs::create_directories(a.out);
    NoGradGuard<float> guard;
    for (const auto& path : list_inputs(a.in)) {
        const Image img = load_png(path.string());
        const std::size_t h = img.dim(2), w = img.dim(3);
        const auto out = model.forward(pad_to_multiple(img, model.config().extent_multiple()));
        const std::string stem = path.stem().string();
        save_png((fs::path(a.out) / (stem + ".png")).string(), crop(clamp(out.derained_full, 0.0f, 1.0f), h, w));
        if (a.dump) {
            // raw float32 tensors (checkpoint format) plus min-max visualisations
            Checkpoint raw;
            auto put = [&](const std::string& n, const Tensor<float>& t) { raw.push_back({n, t.shape(), t.data()}); };
            put("rainy_sub", out.rainy_sub);
            put("rain_pred_sub", out.rain_pred_sub);
            put("derained_sub", out.derained_sub);
            put("f_bt", out.mam.f_bt);
            put("f_b_s", out.mam.f_b_s);
            put("f_mam", out.mam.f_mam);
            write_checkpoint((fs::path(a.out) / (stem + ".intermediates")).string(), raw);
            save_png((fs::path(a.out) / (stem + "_rain_pred_sub.png")).string(), minmax_channels(out.rain_pred_sub));
            save_png((fs::path(a.out) / (stem + "_derained_sub.png")).string(), minmax_channels(out.derained_sub));
            save_feature_grid(fs::path(a.out) / (stem + "_f_bt.png"), out.mam.f_bt);
            save_feature_grid(fs::path(a.out) / (stem + "_f_b_s.png"), out.mam.f_b_s);
            save_feature_grid(fs::path(a.out) / (stem + "_f_mam.png"), out.mam.f_mam);
        }
        std::cout << path.string() << " -> " << (fs::path(a.out) / (stem + ".png")).string() << "\n";
    }
    return 0;
}

struct EvalArgs {
    std::string ckpt, data, out;
};

int cmd_eval(const EvalArgs& a) {
    const auto model = load_model(a.ckpt);
    const auto data = load_dataset(a.data);
    std::ostringstream csv;
    csv << "id,psnr_db,ssim,ms_per_image\n";
    double sp = 0, ss = 0, st = 0;
    NoGradGuard<float> guard;
    for (const auto& p : data) {
        const std::size_t h = p.rainy.dim(2), w = p.rainy.dim(3);
        const auto t0 = std::chrono::steady_clock::now();
        const auto out = model.forward(pad_to_multiple(p.rainy, model.config().extent_multiple()));
        const Image pred = crop(clamp(out.derained_full, 0.0f, 1.0f), h, w);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        const double ps = psnr(pred, p.clean), si = ssim_value(pred, p.clean);
        char line[256];
        std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%.3f\n", p.id.c_str(), ps, si, ms);
        csv << line;
        sp += ps;
        ss += si;
        st += ms;
    }
    const double n = static_cast<double>(data.size());
    char line[256];
    std::snprintf(line, sizeof(line), "mean,%.6f,%.6f,%.3f\n", sp / n, ss / n, st / n);
    csv << line;
    if (a.out.empty()) std::cout << csv.str();
    else write_text(a.out, csv.str());
    return 0;
}

// ---- diagnostics -----------------------------------------------------------

int cmd_gradcheck(const std::string& scope, bool negative) {
    const auto rep = negative ? gradcheck_negative_control() : gradcheck(scope);
    std::printf("scope,param,checked,straddled,max_rel_err,tolerance,pass\n");
    for (const auto& e : rep.entries)
        std::printf("%s,%s,%zu,%zu,%.3e,%.0e,%s\n", e.scope.c_str(), e.param.c_str(), e.checked, e.straddled,
                    e.max_rel_err, e.tolerance, e.pass ? "pass" : "FAIL");
    std::printf("# %zu tensors, max rel err %.3e, %.1f s: %s\n", rep.entries.size(), rep.max_rel_err(), rep.seconds,
                rep.pass() ? "PASS" : "FAIL");
    // the negative control succeeds when the corrupted gradient is caught
    return (negative ? !rep.pass() : rep.pass()) ? 0 : 1;
}

int cmd_params(const std::string& variant, bool symmetric) {
    auto cfg = ModelConfig::from_variant(variant);
    cfg.dsc_encoder = !symmetric;
    std::printf("variant %s%s\n", variant.c_str(), symmetric ? " (symmetric encoder)" : "");
    for (const auto& [module, n] : param_breakdown(cfg)) std::printf("  %-16s %10zu\n", module.c_str(), n);
    const auto total = count_params(cfg);
    std::printf("total %zu (%.3f M)\n", total, static_cast<double>(total) / 1e6);
    return 0;
}

int cmd_histcheck(const std::string& dir, std::size_t factor, double min_mean, double min_each) {
    const auto data = load_dataset(dir);
    std::printf("id,correlation\n");
    double sum = 0, lo = 1;
    for (const auto& p : data) {
        if (p.rainy.dim(2) % factor || p.rainy.dim(3) % factor)
            throw Error("image " + p.id + " extents are not divisible by " + std::to_string(factor));
        const double r = hist_correlation(y_histogram(p.rainy), y_histogram(down_up(p.rainy, factor)));
        std::printf("%s,%.6f\n", p.id.c_str(), r);
        sum += r;
        lo = std::min(lo, r);
    }
    const double mean = sum / static_cast<double>(data.size());
    const bool ok = mean >= min_mean && lo >= min_each;
    std::printf("# %zu images, factor %zu: mean %.4f (>= %.2f), min %.4f (>= %.2f): %s\n", data.size(), factor, mean,
                min_mean, lo, min_each, ok ? "PASS" : "FAIL");
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ELF single-image deraining (desk scale)"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    SynthArgs sa;
    auto* synth = app.add_subcommand("synth", "generate a synthetic rainy/clean dataset");
    synth->add_option("--out", sa.out, "output directory")->required();
    synth->add_option("--count", sa.count, "number of pairs");
    synth->add_option("--size", sa.size, "image side in pixels");
    synth->add_option("--seed", sa.seed, "random seed");
    synth->add_option("--rain", sa.rain, "rain parameters, key=value[,key=value] (streaks, density, angle_min, ...)");
    synth->add_option("--kinds", sa.kinds, "clean image kinds: ramp,checker,blobs,mixed");

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--config", ta.config, "INI run configuration (default: desk variant)");
    train->add_option("--data", ta.data, "dataset directory with manifest.tsv")->required();
    train->add_option("--out", ta.out, "run directory")->required();
    train->add_option("--set", ta.set, "override, section.key=value");
    train->add_flag("--resume", ta.resume, "continue from the checkpoint in --out");
    train->add_flag("--quiet", ta.quiet, "no per-step output");

    DerainArgs da;
    auto* derain = app.add_subcommand("derain", "derain an image or a directory of PNGs");
    derain->add_option("--ckpt", da.ckpt, "model checkpoint (config.ini alongside)")->required();
    derain->add_option("--in", da.in, "input PNG or directory")->required();
    derain->add_option("--out", da.out, "output directory")->required();
    derain->add_flag("--dump-intermediates", da.dump, "also write sub-grid rain/background and MAM features");

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "PSNR/SSIM over a dataset");
    eval->add_option("--ckpt", ea.ckpt, "model checkpoint")->required();
    eval->add_option("--data", ea.data, "dataset directory")->required();
    eval->add_option("--out", ea.out, "CSV path (default: stdout)");

    std::string scope = "all";
    bool negative = false;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    gc->add_option("--scope", scope, "layer name or 'all'");
    gc->add_flag("--negative-control", negative, "check a deliberately wrong gradient instead");

    std::string variant = "ELF";
    bool symmetric = false;
    auto* params = app.add_subcommand("params", "parameter count and per-module breakdown");
    params->add_option("--variant", variant, "ELF, ELF-LW or desk");
    params->add_flag("--symmetric", symmetric, "use standard convolutions in the EDB encoder");

    std::string hdir;
    std::size_t factor = 2;
    double min_mean = 0.9, min_each = 0.85;
    auto* hist = app.add_subcommand("histcheck", "luma histogram similarity after down/up-sampling");
    hist->add_option("--data", hdir, "dataset directory")->required();
    hist->add_option("--factor", factor, "sampling factor");
    hist->add_option("--min-mean", min_mean, "required mean correlation");
    hist->add_option("--min-each", min_each, "required per-image correlation");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*synth) return cmd_synth(sa);
        if (*train) return cmd_train(ta);
        if (*derain) return cmd_derain(da);
        if (*eval) return cmd_eval(ea);
        if (*gc) return cmd_gradcheck(scope, negative);
        if (*params) return cmd_params(variant, symmetric);
        if (*hist) return cmd_histcheck(hdir, factor, min_mean, min_each);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
