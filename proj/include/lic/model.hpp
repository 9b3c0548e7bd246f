#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lic/entropy.hpp"
#include "lic/error.hpp"
#include "lic/layers.hpp"
#include "lic/losses.hpp"
#include "lic/rng.hpp"
#include "lic/tensor.hpp"

namespace lic {

enum class Arch { factorized, hyper };

inline std::string to_string(Arch a) {
    return a == Arch::factorized ? "factorized" : "hyper";
}

inline Arch arch_from_string(const std::string& s) {
    if (s == "factorized") return Arch::factorized;
    if (s == "hyper") return Arch::hyper;
    throw ConfigError("unknown arch '" + s + "' (expected factorized|hyper)");
}

// A complete compression model: transforms, entropy models, and the metadata
// needed to rebuild/retrain it. Student models carry frozen decoder-side
// modules cloned from their teacher.
struct ModelState {
    Arch arch = Arch::factorized;
    std::string role = "teacher";  // teacher | student
    int64_t r = 1;                 // encoder width divisor (1 for teachers)
    double lambda = 0.01;
    std::string provenance = "teacher";  // how the weights came to be

    int64_t N = 0, M = 0;    // main transform widths / latent channels
    int64_t Nh = 0, Mh = 0;  // hyper transform widths (hyper arch only)

    Network g_a, g_s;  // analysis / synthesis
    Network h_a, h_s;  // hyper analysis / synthesis (hyper arch only)
    EntropyBottleneck eb;  // over y (factorized) or z (hyper)

    bool frozen_g_s = false;
    bool frozen_eb = false;
    bool frozen_h_s = false;

    std::vector<std::pair<std::string, Tensor>> named_params() const {
        std::vector<std::pair<std::string, Tensor>> out;
        auto append = [&out](std::vector<std::pair<std::string, Tensor>> part) {
            for (auto& p : part) out.push_back(std::move(p));
        };
        append(g_a.named_params("g_a"));
        append(g_s.named_params("g_s"));
        if (!h_a.empty()) append(h_a.named_params("h_a"));
        if (!h_s.empty()) append(h_s.named_params("h_s"));
        append(eb.named_params("eb"));
        return out;
    }

    bool is_frozen_module(const std::string& param_name) const {
        if (param_name.rfind("g_s", 0) == 0) return frozen_g_s;
        if (param_name.rfind("h_s", 0) == 0) return frozen_h_s;
        if (param_name.rfind("eb", 0) == 0) return frozen_eb;
        return false;
    }

    std::vector<Tensor> trainable_params() const {
        std::vector<Tensor> out;
        for (auto& [name, t] : named_params())
            if (!is_frozen_module(name)) out.push_back(t);
        return out;
    }

    // Synchronizes requires_grad with the frozen flags so no gradient is even
    // computed for frozen modules.
    void apply_freeze() {
        g_a.set_requires_grad(true);
        g_s.set_requires_grad(!frozen_g_s);
        if (!h_a.empty()) h_a.set_requires_grad(true);
        if (!h_s.empty()) h_s.set_requires_grad(!frozen_h_s);
        if (!eb.empty()) eb.set_requires_grad(!frozen_eb);
    }

    // Restores GDN parameter constraints after an optimizer step.
    void reproject() {
        g_a.reproject();
        g_s.reproject();
    }
};

// Freshly initialized full-width model.
inline ModelState make_teacher(Arch arch, int64_t N, int64_t M, int64_t Nh, int64_t Mh,
                               double lambda, Rng& rng) {
    ModelState m;
    m.arch = arch;
    m.lambda = lambda;
    m.N = N;
    m.M = M;
    auto [ga_spec, gs_spec] = build_factorized_codec(N, M);
    m.g_a = Network(ga_spec, &rng);
    m.g_s = Network(gs_spec, &rng);
    if (arch == Arch::hyper) {
        m.Nh = Nh;
        m.Mh = Mh;
        auto [ha_spec, hs_spec] = build_hyper_codec(M, Nh, Mh);
        m.h_a = Network(ha_spec, &rng);
        m.h_s = Network(hs_spec, &rng);
        m.eb = EntropyBottleneck(Mh, rng);
    } else {
        m.eb = EntropyBottleneck(M, rng);
    }
    return m;
}

// Builds a student from a trained teacher: decoder-side modules (g_s, eb,
// and h_s for the hyper arch) are cloned and frozen; encoder-side modules
// (g_a, and h_a) are fresh with interior widths divided by r. Latent widths
// are untouched so the frozen modules still fit. With copy_encoder the
// encoders are cloned too (requires r == 1); that student is functionally
// identical to its teacher.
inline ModelState make_student(const ModelState& teacher, int64_t r, Rng& rng,
                               bool copy_encoder = false,
                               const std::string& provenance = "distilled") {
    if (teacher.role != "teacher")
        throw ContractError("make_student: source model is not a teacher");
    if (copy_encoder && r != 1)
        throw ContractError("make_student: copying the encoder requires r == 1");
    ModelState s;
    s.arch = teacher.arch;
    s.role = "student";
    s.r = r;
    s.lambda = teacher.lambda;
    s.provenance = provenance;
    s.N = teacher.N;
    s.M = teacher.M;
    s.Nh = teacher.Nh;
    s.Mh = teacher.Mh;

    const ReductionSpec reduction{r, {NetRole::g_a, NetRole::h_a}};
    s.g_a = copy_encoder ? teacher.g_a.clone()
                         : Network(reduce_width(teacher.g_a.spec(), reduction), &rng);
    s.g_s = teacher.g_s.clone();
    s.eb = teacher.eb.clone();
    s.frozen_g_s = true;
    s.frozen_eb = true;
    if (teacher.arch == Arch::hyper) {
        s.h_a = copy_encoder ? teacher.h_a.clone()
                             : Network(reduce_width(teacher.h_a.spec(), reduction), &rng);
        s.h_s = teacher.h_s.clone();
        s.frozen_h_s = true;
    }
    s.apply_freeze();
    return s;
}

// Everything one pass through the model produces. Tensors that do not apply
// (hyper quantities under the factorized arch) stay default-constructed.
struct ForwardResult {
    Tensor x_hat;
    Tensor y, y_hat, p_y;
    Tensor z, z_hat, p_z;
};

// Training-time pass: additive-noise quantization everywhere. The rng feeds
// the hyper-latent's noise first, then the latent's, so a fixed seed pins
// the whole pass.
inline ForwardResult forward_train(const ModelState& m, const Tensor& x, Rng& noise_rng) {
    ForwardResult fr;
    fr.y = m.g_a.forward(x);
    if (m.arch == Arch::hyper) {
        fr.z = m.h_a.forward(fr.y);
        fr.z_hat = quantize_noise(fr.z, noise_rng);
        fr.p_z = m.eb.likelihood(fr.z_hat);
        auto [mu, sigma] = split_scale_params(m.h_s.forward(fr.z_hat), m.M);
        fr.y_hat = quantize_noise(fr.y, noise_rng);
        fr.p_y = gaussian_likelihood(fr.y_hat, mu, sigma);
    } else {
        fr.y_hat = quantize_noise(fr.y, noise_rng);
        fr.p_y = m.eb.likelihood(fr.y_hat);
    }
    fr.x_hat = m.g_s.forward(fr.y_hat);
    return fr;
}

// Evaluation-time pass: hard rounding, the conditional mean as the rounding
// offset, no gradient bookkeeping.
inline ForwardResult forward_eval(const ModelState& m, const Tensor& x) {
    NoGradGuard ng;
    ForwardResult fr;
    fr.y = m.g_a.forward(x);
    if (m.arch == Arch::hyper) {
        fr.z = m.h_a.forward(fr.y);
        fr.z_hat = quantize_round(fr.z);
        fr.p_z = m.eb.likelihood(fr.z_hat);
        auto [mu, sigma] = split_scale_params(m.h_s.forward(fr.z_hat), m.M);
        fr.y_hat = quantize_round(fr.y, mu);
        fr.p_y = gaussian_likelihood(fr.y_hat, mu, sigma);
    } else {
        fr.y_hat = quantize_round(fr.y);
        fr.p_y = m.eb.likelihood(fr.y_hat);
    }
    fr.x_hat = m.g_s.forward(fr.y_hat);
    return fr;
}

// Rate-distortion objective matching the model's architecture.
inline LossBreakdown model_loss(const ModelState& m, const Tensor& x,
                                const ForwardResult& fr) {
    return m.arch == Arch::hyper
               ? rd_loss_hyper(x, fr.x_hat, fr.p_y, fr.p_z, m.lambda)
               : rd_loss(x, fr.x_hat, fr.p_y, m.lambda);
}

}  // namespace lic
