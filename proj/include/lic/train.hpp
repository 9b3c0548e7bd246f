#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "lic/adam.hpp"
#include "lic/data.hpp"
#include "lic/error.hpp"
#include "lic/losses.hpp"
#include "lic/model.hpp"
#include "lic/rng.hpp"

namespace lic {

enum class Regime { teacher, kd, frozen };

inline std::string to_string(Regime r) {
    switch (r) {
        case Regime::teacher: return "teacher";
        case Regime::kd: return "kd";
        case Regime::frozen: return "frozen";
    }
    return "?";
}

struct TrainConfig {
    double lambda = 0.01;
    double rho_percent = 100.0;  // dataset fraction, in percent
    int64_t r = 1;
    int64_t steps = 2000;
    int64_t batch_size = 4;
    int64_t patch_size = 64;
    double lr = 1e-3;
    uint64_t seed = 0;
    Regime regime = Regime::teacher;
};

inline void validate(const TrainConfig& c) {
    if (!(c.rho_percent > 0.0 && c.rho_percent <= 100.0))
        throw ContractError("TrainConfig: rho_percent must lie in (0, 100], got " +
                            std::to_string(c.rho_percent));
    // steps == 0 is tolerated as an explicit no-op (train on nothing, return
    // the state unchanged); negative step counts are nonsense.
    if (c.steps < 0) throw ContractError("TrainConfig: steps must be >= 0");
    if (c.batch_size < 1) throw ContractError("TrainConfig: batch_size must be >= 1");
    if (c.patch_size < 1) throw ContractError("TrainConfig: patch_size must be >= 1");
    if (c.r < 1) throw ContractError("TrainConfig: r must be >= 1");
    if (!(c.lr > 0.0)) throw ContractError("TrainConfig: lr must be positive");
}

// One training-log line; mirrors the CSV columns.
struct LogRow {
    int64_t step = 0;
    double total = 0.0;
    double rate_y_bits = 0.0;
    double rate_z_bits = 0.0;
    double distortion = 0.0;
    double kd_loss = 0.0;
};

using TrainLog = std::vector<LogRow>;

// Deterministic rho-percent subsample: Fisher-Yates shuffle of 0..n-1 with
// Rng(seed), then the first ceil(rho/100 * n) indices, in shuffled order.
inline std::vector<int64_t> subsample_dataset(int64_t n, double rho_percent,
                                              uint64_t seed) {
    if (n < 1) throw ContractError("subsample_dataset: empty dataset");
    if (!(rho_percent > 0.0 && rho_percent <= 100.0))
        throw ContractError("subsample_dataset: rho_percent must lie in (0, 100]");
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    fisher_yates_shuffle(idx, rng);
    // The 1e-9 slack keeps exact fractions (rho/100 * n integral in exact
    // arithmetic) from being bumped to the next integer by rounding noise.
    const double q = rho_percent / 100.0 * static_cast<double>(n);
    const int64_t k =
        std::max<int64_t>(1, static_cast<int64_t>(std::ceil(q - 1e-9)));
    idx.resize(static_cast<size_t>(std::min(k, n)));
    return idx;
}

namespace detail {

// Draws a batch of random patches from the subsampled records.
inline Tensor draw_batch(const Dataset& data, const std::vector<int64_t>& subset,
                         const TrainConfig& cfg, Rng& data_rng) {
    std::vector<Tensor> patches;
    patches.reserve(static_cast<size_t>(cfg.batch_size));
    for (int64_t b = 0; b < cfg.batch_size; ++b) {
        const int64_t pick = subset[static_cast<size_t>(
            data_rng.next_below(static_cast<uint64_t>(subset.size())))];
        patches.push_back(random_crop(data[static_cast<size_t>(pick)], cfg.patch_size,
                                      data_rng));
    }
    return stack_batch(patches);
}

// Shared loop: subsample, draw, compute the regime's loss, step, reproject.
// make_loss(x, noise_rng) returns the scalar loss plus the log fields.
template <typename LossFn>
void training_loop(ModelState& model, const TrainConfig& cfg, const Dataset& data,
                   TrainLog* log, LossFn&& make_loss) {
    validate(cfg);
    const std::vector<int64_t> subset =
        subsample_dataset(static_cast<int64_t>(data.size()), cfg.rho_percent, cfg.seed);
    Rng data_rng(Rng::mix(cfg.seed, 2));
    Rng noise_rng(Rng::mix(cfg.seed, 3));
    model.apply_freeze();
    Adam opt(model.trainable_params(), cfg.lr);
    for (int64_t step = 1; step <= cfg.steps; ++step) {
        Tensor x = draw_batch(data, subset, cfg, data_rng);
        Tensor total;
        LogRow row;
        try {
            std::tie(total, row) = make_loss(x, noise_rng);
        } catch (const NumericError&) {
            // A non-finite activation inside the pass is divergence too.
            throw NumericError("training diverged: non-finite loss at step " +
                               std::to_string(step));
        }
        row.step = step;
        if (!std::isfinite(row.total))
            throw NumericError("training diverged: non-finite loss at step " +
                               std::to_string(step));
        backward(total);
        opt.step();
        model.reproject();
        if (log) log->push_back(row);
    }
}

}  // namespace detail

// Full-model rate-distortion training (the teacher regime). The model is
// updated in place; with steps == 0 it is returned untouched.
inline void train_teacher(ModelState& model, const TrainConfig& cfg, const Dataset& data,
                          TrainLog* log = nullptr) {
    if (cfg.regime != Regime::teacher)
        throw ContractError("train_teacher: config regime must be 'teacher'");
    if (model.frozen_g_s || model.frozen_eb || model.frozen_h_s)
        throw ContractError("train_teacher: teacher models train all modules");
    model.lambda = cfg.lambda;  // the config's tradeoff wins over the label
    detail::training_loop(model, cfg, data, log, [&](const Tensor& x, Rng& noise_rng) {
        ForwardResult fr = forward_train(model, x, noise_rng);
        LossBreakdown lb = model_loss(model, x, fr);
        LogRow row;
        row.total = lb.total_value();
        row.rate_y_bits = lb.rate_y_bits;
        row.rate_z_bits = lb.rate_z_bits;
        row.distortion = lb.distortion_mse;
        return std::pair<Tensor, LogRow>(lb.total, row);
    });
}

// Latent-matching distillation: the student encoder chases the teacher's
// pre-quantization latents; decoder-side modules stay frozen. Teacher
// latents are computed without gradient tracking, so the teacher cannot
// change by construction. The loss has no rate-distortion tradeoff, so
// cfg.lambda is ignored and the student keeps its inherited lambda label.
inline void distill(ModelState& student, const ModelState& teacher,
                    const TrainConfig& cfg, const Dataset& data,
                    TrainLog* log = nullptr) {
    if (cfg.regime != Regime::kd)
        throw ContractError("distill: config regime must be 'kd'");
    if (student.arch != teacher.arch)
        throw ConfigError("distill: student and teacher architectures differ");
    if (student.M != teacher.M || student.Mh != teacher.Mh)
        throw ConfigError("distill: latent channel counts differ (student M=" +
                          std::to_string(student.M) + ", teacher M=" +
                          std::to_string(teacher.M) + ")");
    detail::training_loop(student, cfg, data, log, [&](const Tensor& x, Rng& noise_rng) {
        (void)noise_rng;  // distillation matches pre-quantization latents
        Tensor y_t, z_t;
        {
            NoGradGuard ng;
            y_t = teacher.g_a.forward(x);
            if (teacher.arch == Arch::hyper) z_t = teacher.h_a.forward(y_t);
        }
        Tensor y_s = student.g_a.forward(x);
        if (y_t.shape() != y_s.shape())
            throw ConfigError("distill: latent shape mismatch " +
                              detail::shape_str(y_t.shape()) + " vs " +
                              detail::shape_str(y_s.shape()));
        Tensor loss;
        if (student.arch == Arch::hyper) {
            Tensor z_s = student.h_a.forward(y_s);
            loss = kd_loss_hyper(y_t, z_t, y_s, z_s);
        } else {
            loss = kd_loss(y_t, y_s);
        }
        LogRow row;
        row.total = loss.item();
        row.kd_loss = row.total;
        return std::pair<Tensor, LogRow>(loss, row);
    });
}

// Baseline for the distillation comparison: same freezing as distill, but
// the encoder trains against the ordinary rate-distortion loss through the
// frozen decoder and entropy model.
inline void train_frozen_baseline(ModelState& student, const TrainConfig& cfg,
                                  const Dataset& data, TrainLog* log = nullptr) {
    if (cfg.regime != Regime::frozen)
        throw ContractError("train_frozen_baseline: config regime must be 'frozen'");
    if (!student.frozen_g_s || !student.frozen_eb ||
        (student.arch == Arch::hyper && !student.frozen_h_s))
        throw ContractError(
            "train_frozen_baseline: decoder-side modules must be frozen");
    student.lambda = cfg.lambda;  // the config's tradeoff wins over the label
    detail::training_loop(student, cfg, data, log, [&](const Tensor& x, Rng& noise_rng) {
        ForwardResult fr = forward_train(student, x, noise_rng);
        LossBreakdown lb = model_loss(student, x, fr);
        LogRow row;
        row.total = lb.total_value();
        row.rate_y_bits = lb.rate_y_bits;
        row.rate_z_bits = lb.rate_z_bits;
        row.distortion = lb.distortion_mse;
        return std::pair<Tensor, LogRow>(lb.total, row);
    });
}

// Training-log CSV (step,total,rate_y_bits,rate_z_bits,distortion,kd_loss).
inline std::string log_to_csv(const TrainLog& log) {
    std::string out = "step,total,rate_y_bits,rate_z_bits,distortion,kd_loss\n";
    char buf[192];
    for (const LogRow& r : log) {
        std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                      static_cast<long long>(r.step), r.total, r.rate_y_bits,
                      r.rate_z_bits, r.distortion, r.kd_loss);
        out += buf;
    }
    return out;
}

}  // namespace lic
