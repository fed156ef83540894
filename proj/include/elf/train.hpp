#ifndef ELF_TRAIN_HPP
#define ELF_TRAIN_HPP

// Seeded training loop. Batch composition and crop windows are pure functions
// of (seed, step), so a run resumed from a checkpoint replays exactly the
// batches an uninterrupted run would have seen.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "data.hpp"
#include "model.hpp"
#include "optim.hpp"

namespace elf {

struct TrainOptions {
    std::size_t epochs = 600;
    std::size_t max_steps = 0;  // 0: run all epochs
    std::size_t batch = 12;
    std::size_t patch = 256;    // 0: whole images
    std::uint64_t seed = 0;
    std::size_t save_every = 0; // steps; 0: final checkpoint only
    std::size_t diverge_window = 50;
    double diverge_factor = 10.0;
};

struct LossRecord {
    std::uint64_t step = 0;  // 1-based index of the completed step
    std::size_t epoch = 0;
    double lr = 0;
    double idn = 0, brn = 0, total = 0;
};

inline std::string loss_csv_header() { return "step,epoch,lr,loss_idn,loss_brn,loss_total"; }

inline std::string to_csv(const LossRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%llu,%zu,%.9g,%.9g,%.9g,%.9g", static_cast<unsigned long long>(r.step), r.epoch,
                  r.lr, r.idn, r.brn, r.total);
    return buf;
}

// Stacks [1,3,H,W] images into an [N,3,H,W] batch of element type T.
template <class T>
Tensor<T> stack_images(const std::vector<Image>& imgs) {
    if (imgs.empty()) throw Error("stack_images: empty batch");
    const Shape s = imgs[0].shape();
    std::vector<T> d;
    d.reserve(imgs.size() * imgs[0].size());
    for (const auto& im : imgs) {
        if (im.shape() != s) throw Error("stack_images: images differ in extent");
        for (float v : im.data()) d.push_back(static_cast<T>(v));
    }
    return Tensor<T>(Shape{imgs.size(), s[1], s[2], s[3]}, std::move(d));
}

template <class T>
Image to_image(const Tensor<T>& t, std::size_t n = 0) {
    if (t.rank() != 4 || t.dim(1) != 3) throw Error("to_image: expected [N,3,H,W]");
    const std::size_t len = 3 * t.dim(2) * t.dim(3);
    Image img = make_image(t.dim(2), t.dim(3));
    auto& d = img.mutable_data();
    for (std::size_t i = 0; i < len; ++i) d[i] = static_cast<float>(t[n * len + i]);
    return img;
}

class Diverged : public Error {
public:
    using Error::Error;
};

template <class T>
class Trainer {
public:
    Trainer(ElfModel<T>& model, std::vector<SamplePair> data, TrainOptions opts, AdamOptions adam = {})
        : model_(model), data_(std::move(data)), opts_(opts), adam_(adam) {
        if (data_.empty()) throw Error("train: dataset is empty");
        if (opts_.batch == 0) throw Error("train: batch must be positive");
        const std::size_t m = model_.config().extent_multiple();
        for (const auto& p : data_) {
            const std::size_t h = p.rainy.dim(2), w = p.rainy.dim(3);
            const std::size_t ph = opts_.patch ? opts_.patch : h, pw = opts_.patch ? opts_.patch : w;
            if (ph > h || pw > w)
                throw Error("train: patch " + std::to_string(opts_.patch) + " exceeds image " + p.id);
            if (ph % m || pw % m)
                throw Error("train: training extents must be multiples of " + std::to_string(m) + " (sample " + p.id +
                            ")");
            // the sub-grid loss needs room for one SSIM window
            const std::size_t s = model_.config().sample_factor, win = SsimOptions{}.window;
            if (ph / s < win || pw / s < win)
                throw Error("train: " + std::to_string(ph) + "x" + std::to_string(pw) + " crops give a sub-grid smaller than the " +
                            std::to_string(win) + "-pixel SSIM window; use crops of at least " +
                            std::to_string((win * s + m - 1) / m * m) + " pixels");
        }
        adam_.bind(model_.params());
        if (!opts_.patch)
            for (const auto& p : data_)
                if (p.rainy.shape() != data_[0].rainy.shape())
                    throw Error("train: whole-image batches need equal extents; set a patch size");
    }

    std::size_t steps_per_epoch() const { return (data_.size() + opts_.batch - 1) / opts_.batch; }
    std::uint64_t step_count() const { return adam_.step_count(); }
    std::uint64_t total_steps() const {
        std::uint64_t n = static_cast<std::uint64_t>(opts_.epochs) * steps_per_epoch();
        return opts_.max_steps ? std::min<std::uint64_t>(n, opts_.max_steps) : n;
    }
    Adam<T>& optimizer() { return adam_; }
    double initial_loss() const { return initial_loss_; }

    // Sample indices making up batch `step` (0-based).
    std::vector<std::size_t> batch_indices(std::uint64_t step) const {
        const std::size_t spe = steps_per_epoch();
        const std::size_t epoch = static_cast<std::size_t>(step / spe), k = static_cast<std::size_t>(step % spe);
        std::vector<std::size_t> order(data_.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(mix_seed(opts_.seed, epoch));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(i))]);
        const std::size_t lo = k * opts_.batch, hi = std::min(order.size(), lo + opts_.batch);
        return {order.begin() + static_cast<std::ptrdiff_t>(lo), order.begin() + static_cast<std::ptrdiff_t>(hi)};
    }

    LossRecord step() {
        const std::uint64_t s = step_count();
        const std::size_t epoch = static_cast<std::size_t>(s / steps_per_epoch());
        std::vector<Image> rainy, clean;
        std::size_t slot = 0;
        for (std::size_t i : batch_indices(s)) {
            const auto& p = data_[i];
            if (opts_.patch) {
                auto c = crop_patches(p, opts_.patch, 1, mix_seed(opts_.seed ^ 0xC0FFEEull, s * 1024 + slot++),
                                      model_.config().extent_multiple())[0];
                rainy.push_back(c.rainy);
                clean.push_back(c.clean);
            } else {
                rainy.push_back(p.rainy);
                clean.push_back(p.clean);
            }
        }
        auto& tape = Tape<T>::current();
        tape.clear();
        model_.params().zero_grad();
        const auto x = stack_images<T>(rainy), y = stack_images<T>(clean);
        LossRecord r;
        {
            const auto out = model_.forward(x);
            const auto l = loss_joint(out, y, model_.config());
            r.idn = static_cast<double>(l.idn.item());
            r.brn = static_cast<double>(l.brn.item());
            r.total = static_cast<double>(l.total.item());
            backward(l.total);
        }
        tape.clear();
        if (!std::isfinite(r.total)) throw Diverged("train: loss became non-finite at step " + std::to_string(s + 1));
        adam_.step(model_.params(), epoch);
        r.step = adam_.step_count();
        r.epoch = epoch;
        r.lr = learning_rate(adam_.options(), epoch);
        if (r.step == 1) initial_loss_ = r.total;
        if (r.total > opts_.diverge_factor * std::abs(initial_loss_)) {
            if (++over_ >= opts_.diverge_window)
                throw Diverged("train: loss exceeded " + std::to_string(opts_.diverge_factor) +
                               "x its initial value for " + std::to_string(over_) + " consecutive steps");
        } else {
            over_ = 0;
        }
        return r;
    }

    // Runs to total_steps(). With an output directory the loss curve is
    // appended to loss.csv and checkpoints are written every save_every steps
    // and at the end.
    std::vector<LossRecord> run(const std::string& out_dir = {},
                                const std::function<void(const LossRecord&)>& on_step = {}) {
        std::ofstream csv;
        if (!out_dir.empty()) {
            std::filesystem::create_directories(out_dir);
            const auto path = std::filesystem::path(out_dir) / "loss.csv";
            const bool fresh = step_count() == 0 || !std::filesystem::exists(path);
            csv.open(path, fresh ? std::ios::binary | std::ios::trunc : std::ios::binary | std::ios::app);
            if (!csv) throw Error("cannot write " + path.string());
            if (fresh) csv << loss_csv_header() << '\n';
        }
        std::vector<LossRecord> curve;
        while (step_count() < total_steps()) {
            const auto r = step();
            curve.push_back(r);
            if (csv.is_open()) csv << to_csv(r) << '\n' << std::flush;
            if (on_step) on_step(r);
            if (!out_dir.empty() && opts_.save_every && r.step % opts_.save_every == 0) save(out_dir);
        }
        if (!out_dir.empty()) save(out_dir);
        return curve;
    }

    // model.ckpt holds the parameters, optim.ckpt the Adam moments ("m/<name>",
    // "v/<name>") and the loop counters ("train/...").
    void save(const std::string& dir) const {
        namespace fs = std::filesystem;
        fs::create_directories(dir);
        write_checkpoint((fs::path(dir) / "model.ckpt").string(), to_checkpoint(model_.params()));
        write_checkpoint((fs::path(dir) / "optim.ckpt").string(), optimizer_checkpoint());
    }

    void resume(const std::string& dir) {
        namespace fs = std::filesystem;
        load_into(model_.params(), read_checkpoint((fs::path(dir) / "model.ckpt").string()));
        const auto ck = read_checkpoint((fs::path(dir) / "optim.ckpt").string());
        auto& ps = model_.params();
        adam_.bind(ps);
        std::map<std::string, const CheckpointRecord*> by_name;
        for (const auto& r : ck) by_name[r.name] = &r;
        auto need = [&](const std::string& n, std::size_t size) {
            auto it = by_name.find(n);
            if (it == by_name.end() || it->second->values.size() != size)
                throw Error("optimizer state in " + dir + " lacks a valid entry " + n);
            return it->second;
        };
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const auto& e = ps.entries()[i];
            const auto* m = need("m/" + e.name, e.tensor.size());
            const auto* v = need("v/" + e.name, e.tensor.size());
            for (std::size_t k = 0; k < e.tensor.size(); ++k) {
                adam_.first_moments()[i][k] = static_cast<T>(m->values[k]);
                adam_.second_moments()[i][k] = static_cast<T>(v->values[k]);
            }
        }
        const auto* st = need("train/step", 2);
        adam_.set_step_count(static_cast<std::uint64_t>(st->values[0]) * 65536ull +
                             static_cast<std::uint64_t>(st->values[1]));
        initial_loss_ = need("train/initial_loss", 1)->values[0];
        over_ = static_cast<std::size_t>(need("train/over", 1)->values[0]);
    }

private:
    Checkpoint optimizer_checkpoint() const {
        Checkpoint ck;
        const auto& adam = adam_;
        const auto& ps = model_.params();
        for (std::size_t i = 0; i < ps.size() && i < adam.first_moments().size(); ++i) {
            const auto& e = ps.entries()[i];
            CheckpointRecord m{"m/" + e.name, e.tensor.shape(), {}}, v{"v/" + e.name, e.tensor.shape(), {}};
            for (T x : adam.first_moments()[i]) m.values.push_back(static_cast<float>(x));
            for (T x : adam.second_moments()[i]) v.values.push_back(static_cast<float>(x));
            ck.push_back(std::move(m));
            ck.push_back(std::move(v));
        }
        // the step counter is split into two 16-bit halves so float storage stays exact
        const std::uint64_t s = adam_.step_count();
        ck.push_back({"train/step", {2}, {static_cast<float>(s / 65536), static_cast<float>(s % 65536)}});
        ck.push_back({"train/initial_loss", {1}, {static_cast<float>(initial_loss_)}});
        ck.push_back({"train/over", {1}, {static_cast<float>(over_)}});
        return ck;
    }

    ElfModel<T>& model_;
    std::vector<SamplePair> data_;
    TrainOptions opts_;
    Adam<T> adam_;
    double initial_loss_ = 0;
    std::size_t over_ = 0;
};

}  // namespace elf

#endif  // ELF_TRAIN_HPP
