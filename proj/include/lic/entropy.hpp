#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "lic/error.hpp"
#include "lic/rng.hpp"
#include "lic/tensor.hpp"

namespace lic {

inline constexpr double kEpsP = 1e-9;       // likelihood floor
inline constexpr double kSigmaMin = 0.11;   // conditional scale floor
inline constexpr double kInvLn2 = 1.4426950408889634074;

// ---------------------------------------------------------------------------
// Quantization
// ---------------------------------------------------------------------------

enum class QuantMode { noise, round };

namespace detail {

inline void check_finite(const Tensor& t, const char* what) {
    for (double x : t.data())
        if (!std::isfinite(x))
            throw NumericError(std::string(what) + ": non-finite value encountered");
}

}  // namespace detail

// Training-time proxy: additive uniform noise. The noise is a constant, so
// gradients pass through unchanged (straight-through by construction).
inline Tensor quantize_noise(const Tensor& y, Rng& rng) {
    detail::check_finite(y, "quantize");
    Tensor u = Tensor::uniform(y.shape(), -0.5, 0.5, rng);
    return add(y, u);
}

// Evaluation-time quantization: round halves away from zero, optionally
// around a per-element offset (the conditional model's mean). The result is
// a constant; no gradients flow through rounding.
inline Tensor quantize_round(const Tensor& y, const Tensor& offset = Tensor()) {
    detail::check_finite(y, "quantize");
    if (offset.defined() && offset.shape() != y.shape())
        throw DimensionError("quantize_round: offset shape mismatch");
    std::vector<double> out(y.numel());
    const auto& yv = y.data();
    if (offset.defined()) {
        const auto& ov = offset.data();
        for (size_t i = 0; i < out.size(); ++i) out[i] = std::round(yv[i] - ov[i]) + ov[i];
    } else {
        for (size_t i = 0; i < out.size(); ++i) out[i] = std::round(yv[i]);
    }
    return Tensor::from_data(y.shape(), std::move(out));
}

inline Tensor quantize(const Tensor& y, QuantMode mode, Rng* rng = nullptr,
                       const Tensor& offset = Tensor()) {
    if (mode == QuantMode::noise) {
        if (offset.defined())
            throw ContractError("quantize: offset is only valid in round mode");
        if (!rng) throw ContractError("quantize: noise mode needs an rng stream");
        return quantize_noise(y, *rng);
    }
    return quantize_round(y, offset);
}

// ---------------------------------------------------------------------------
// Entropy bottleneck
// ---------------------------------------------------------------------------

namespace detail {

// Fused per-channel monotone CDF: K=4 stages of 3 filters, softplus-positive
// weights, tanh residual gates on the internal stages, sigmoid output.
// Implemented as one custom op with a hand-written backward (the stages are
// recomputed there; the tensors are small).
struct EbTensors {
    // raw (pre-softplus) weights, biases, raw (pre-tanh) gates
    Tensor h1, b1, a1;  // [C,3] each
    Tensor h2, b2, a2;  // [C,9], [C,3], [C,3]
    Tensor h3, b3, a3;  // [C,9], [C,3], [C,3]
    Tensor h4, b4;      // [C,3], [C,1]
};

inline Tensor eb_cdf_op(const Tensor& v, const EbTensors& p, int64_t C) {
    if (v.ndim() != 4 || v.dim(1) != C)
        throw DimensionError("entropy bottleneck: expected [B," + std::to_string(C) +
                             ",H,W] input, got " + shape_str(v.shape()));
    const int64_t n = v.numel();
    const int64_t hw = v.dim(2) * v.dim(3);

    auto softplus = [](double x) {
        return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    };
    auto sigmoid = [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    };

    // Per-channel transformed parameters, shared across elements.
    std::vector<double> sp1(C * 3), sp2(C * 9), sp3(C * 9), sp4(C * 3);
    std::vector<double> g1(C * 3), g2(C * 3), g3(C * 3);
    for (int64_t i = 0; i < C * 3; ++i) {
        sp1[i] = softplus(p.h1.data()[i]);
        sp4[i] = softplus(p.h4.data()[i]);
        g1[i] = std::tanh(p.a1.data()[i]);
        g2[i] = std::tanh(p.a2.data()[i]);
        g3[i] = std::tanh(p.a3.data()[i]);
    }
    for (int64_t i = 0; i < C * 9; ++i) {
        sp2[i] = softplus(p.h2.data()[i]);
        sp3[i] = softplus(p.h3.data()[i]);
    }

    std::vector<double> out(n);
    const auto& vd = v.data();
    for (int64_t e = 0; e < n; ++e) {
        const int64_t c = (e / hw) % C;
        const double* s1 = sp1.data() + c * 3;
        const double* s2 = sp2.data() + c * 9;
        const double* s3 = sp3.data() + c * 9;
        const double* s4 = sp4.data() + c * 3;
        const double t = vd[e];
        double x1[3], x2[3], x3[3];
        for (int j = 0; j < 3; ++j) {
            const double u = s1[j] * t + p.b1.data()[c * 3 + j];
            x1[j] = u + g1[c * 3 + j] * std::tanh(u);
        }
        for (int j = 0; j < 3; ++j) {
            double u = p.b2.data()[c * 3 + j];
            for (int i = 0; i < 3; ++i) u += s2[j * 3 + i] * x1[i];
            x2[j] = u + g2[c * 3 + j] * std::tanh(u);
        }
        for (int j = 0; j < 3; ++j) {
            double u = p.b3.data()[c * 3 + j];
            for (int i = 0; i < 3; ++i) u += s3[j * 3 + i] * x2[i];
            x3[j] = u + g3[c * 3 + j] * std::tanh(u);
        }
        double u4 = p.b4.data()[c];
        for (int i = 0; i < 3; ++i) u4 += s4[i] * x3[i];
        out[e] = sigmoid(u4);
    }

    auto pv = v.node();
    auto ph1 = p.h1.node(), pb1 = p.b1.node(), pa1 = p.a1.node();
    auto ph2 = p.h2.node(), pb2 = p.b2.node(), pa2 = p.a2.node();
    auto ph3 = p.h3.node(), pb3 = p.b3.node(), pa3 = p.a3.node();
    auto ph4 = p.h4.node(), pb4 = p.b4.node();
    auto bwd = [=, sp1 = std::move(sp1), sp2 = std::move(sp2), sp3 = std::move(sp3),
                sp4 = std::move(sp4), g1 = std::move(g1), g2 = std::move(g2),
                g3 = std::move(g3)](Node& self) {
        auto sigmoid_l = [](double x) {
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        };
        const bool need_v = pv->requires_grad;
        const bool need_p = ph1->requires_grad;  // params share one frozen flag
        double* gv = need_v ? pv->grad_buf().data() : nullptr;
        double *gh1 = nullptr, *gb1 = nullptr, *ga1 = nullptr, *gh2 = nullptr,
               *gb2 = nullptr, *ga2 = nullptr, *gh3 = nullptr, *gb3 = nullptr,
               *ga3 = nullptr, *gh4 = nullptr, *gb4 = nullptr;
        if (need_p) {
            gh1 = ph1->grad_buf().data();
            gb1 = pb1->grad_buf().data();
            ga1 = pa1->grad_buf().data();
            gh2 = ph2->grad_buf().data();
            gb2 = pb2->grad_buf().data();
            ga2 = pa2->grad_buf().data();
            gh3 = ph3->grad_buf().data();
            gb3 = pb3->grad_buf().data();
            ga3 = pa3->grad_buf().data();
            gh4 = ph4->grad_buf().data();
            gb4 = pb4->grad_buf().data();
        }
        if (!need_v && !need_p) return;
        const int64_t n_ = self.numel();
        const int64_t hw_ = self.shape[2] * self.shape[3];
        const int64_t C_ = self.shape[1];
        for (int64_t e = 0; e < n_; ++e) {
            const double go = self.grad[e];
            if (go == 0.0) continue;
            const int64_t c = (e / hw_) % C_;
            const double* s1 = sp1.data() + c * 3;
            const double* s2 = sp2.data() + c * 9;
            const double* s3 = sp3.data() + c * 9;
            const double* s4 = sp4.data() + c * 3;
            // recompute the stage activations
            const double t = pv->value[e];
            double u1[3], x1[3], u2[3], x2[3], u3[3], x3[3];
            for (int j = 0; j < 3; ++j) {
                u1[j] = s1[j] * t + pb1->value[c * 3 + j];
                x1[j] = u1[j] + g1[c * 3 + j] * std::tanh(u1[j]);
            }
            for (int j = 0; j < 3; ++j) {
                double u = pb2->value[c * 3 + j];
                for (int i = 0; i < 3; ++i) u += s2[j * 3 + i] * x1[i];
                u2[j] = u;
                x2[j] = u + g2[c * 3 + j] * std::tanh(u);
            }
            for (int j = 0; j < 3; ++j) {
                double u = pb3->value[c * 3 + j];
                for (int i = 0; i < 3; ++i) u += s3[j * 3 + i] * x2[i];
                u3[j] = u;
                x3[j] = u + g3[c * 3 + j] * std::tanh(u);
            }
            // reverse sweep
            const double s = self.value[e];
            const double du4 = go * s * (1.0 - s);
            double dx3[3], dx2[3], dx1[3];
            if (need_p) {
                gb4[c] += du4;
                for (int i = 0; i < 3; ++i)
                    gh4[c * 3 + i] += du4 * x3[i] * sigmoid_l(ph4->value[c * 3 + i]);
            }
            for (int i = 0; i < 3; ++i) dx3[i] = du4 * s4[i];

            auto stage_back = [&](const double* u, const double* xin, const double* g,
                                  const double* sp, const std::shared_ptr<Node>& ph,
                                  double* gh, double* gb, double* ga, const double* dxo,
                                  double* dxi, int in_dim) {
                double du[3];
                for (int j = 0; j < 3; ++j) {
                    const double tu = std::tanh(u[j]);
                    du[j] = dxo[j] * (1.0 + g[c * 3 + j] * (1.0 - tu * tu));
                    if (ga) {
                        const double gg = g[c * 3 + j];
                        ga[c * 3 + j] += dxo[j] * tu * (1.0 - gg * gg);
                    }
                    if (gb) gb[c * 3 + j] += du[j];
                }
                if (in_dim == 1) {
                    if (gh)
                        for (int j = 0; j < 3; ++j)
                            gh[c * 3 + j] +=
                                du[j] * xin[0] * sigmoid_l(ph->value[c * 3 + j]);
                    dxi[0] = 0.0;
                    for (int j = 0; j < 3; ++j) dxi[0] += du[j] * sp[c * 3 + j];
                } else {
                    for (int i = 0; i < 3; ++i) dxi[i] = 0.0;
                    for (int j = 0; j < 3; ++j)
                        for (int i = 0; i < 3; ++i) {
                            if (gh)
                                gh[c * 9 + j * 3 + i] +=
                                    du[j] * xin[i] * sigmoid_l(ph->value[c * 9 + j * 3 + i]);
                            dxi[i] += du[j] * sp[c * 9 + j * 3 + i];
                        }
                }
            };

            stage_back(u3, x2, g3.data(), sp3.data(), ph3, gh3, gb3, ga3, dx3, dx2, 3);
            stage_back(u2, x1, g2.data(), sp2.data(), ph2, gh2, gb2, ga2, dx2, dx1, 3);
            double dt;
            const double tin[1] = {t};
            stage_back(u1, tin, g1.data(), sp1.data(), ph1, gh1, gb1, ga1, dx1, &dt, 1);
            if (need_v) gv[e] += dt;
        }
    };
    return make_op(v.shape(), std::move(out),
                   {v, p.h1, p.b1, p.a1, p.h2, p.b2, p.a2, p.h3, p.b3, p.a3, p.h4, p.b4},
                   std::move(bwd));
}

}  // namespace detail

// Learned factorized probability model over quantized values, one CDF per
// channel. p(v) = max(c(v+1/2) - c(v-1/2), eps_p).
class EntropyBottleneck {
public:
    EntropyBottleneck() = default;

    EntropyBottleneck(int64_t channels, Rng& rng) : channels_(channels) {
        if (channels < 1) throw ContractError("entropy bottleneck needs >= 1 channel");
        // Initial slopes make the CDF span roughly +-10 per stage composition
        // (overall u4 ~ t/10), the construction's standard starting point.
        const double scale = std::pow(10.0, 0.25);
        const double w_internal = std::log(std::expm1(1.0 / (scale * 3.0)));
        const double w_final = std::log(std::expm1(1.0 / scale));
        auto raw = [&](std::vector<int64_t> shape, double value) {
            return Tensor::full(std::move(shape), value, true);
        };
        auto bias = [&](std::vector<int64_t> shape) {
            return Tensor::uniform(std::move(shape), -0.5, 0.5, rng, true);
        };
        t_.h1 = raw({channels, 3}, w_internal);
        t_.b1 = bias({channels, 3});
        t_.a1 = raw({channels, 3}, 0.0);
        t_.h2 = raw({channels, 9}, w_internal);
        t_.b2 = bias({channels, 3});
        t_.a2 = raw({channels, 3}, 0.0);
        t_.h3 = raw({channels, 9}, w_internal);
        t_.b3 = bias({channels, 3});
        t_.a3 = raw({channels, 3}, 0.0);
        t_.h4 = raw({channels, 3}, w_final);
        t_.b4 = bias({channels, 1});
    }

    bool empty() const { return channels_ == 0; }
    int64_t channels() const { return channels_; }

    Tensor cdf(const Tensor& v) const {
        detail::check_finite(v, "entropy bottleneck");
        return detail::eb_cdf_op(v, t_, channels_);
    }

    Tensor likelihood(const Tensor& v) const {
        detail::check_finite(v, "entropy bottleneck");
        Tensor upper = detail::eb_cdf_op(add_scalar(v, 0.5), t_, channels_);
        Tensor lower = detail::eb_cdf_op(add_scalar(v, -0.5), t_, channels_);
        return clamp_min(sub(upper, lower), kEpsP);
    }

    std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const {
        return {{prefix + "/h1", t_.h1}, {prefix + "/b1", t_.b1}, {prefix + "/a1", t_.a1},
                {prefix + "/h2", t_.h2}, {prefix + "/b2", t_.b2}, {prefix + "/a2", t_.a2},
                {prefix + "/h3", t_.h3}, {prefix + "/b3", t_.b3}, {prefix + "/a3", t_.a3},
                {prefix + "/h4", t_.h4}, {prefix + "/b4", t_.b4}};
    }

    std::vector<Tensor> params() const {
        std::vector<Tensor> out;
        for (auto& [name, t] : named_params("")) out.push_back(t);
        return out;
    }

    void set_requires_grad(bool rg) {
        for (auto& t : params()) t.set_requires_grad(rg);
    }

    EntropyBottleneck clone() const {
        EntropyBottleneck out;
        out.channels_ = channels_;
        auto dup = [](const Tensor& t) {
            return Tensor::from_data(t.shape(), t.data(), t.requires_grad());
        };
        out.t_ = {dup(t_.h1), dup(t_.b1), dup(t_.a1), dup(t_.h2), dup(t_.b2), dup(t_.a2),
                  dup(t_.h3), dup(t_.b3), dup(t_.a3), dup(t_.h4), dup(t_.b4)};
        return out;
    }

private:
    int64_t channels_ = 0;
    detail::EbTensors t_;
};

// ---------------------------------------------------------------------------
// Gaussian conditional
// ---------------------------------------------------------------------------

// Splits the hyper-synthesis output into the conditional model's mean and
// scale: first M channels are mu, last M are the raw scale, mapped through
// softplus and floored at sigma_min.
inline std::pair<Tensor, Tensor> split_scale_params(const Tensor& hs_out, int64_t M) {
    if (hs_out.ndim() != 4 || hs_out.dim(1) != 2 * M)
        throw DimensionError("split_scale_params: expected 2M=" + std::to_string(2 * M) +
                             " channels, got " + detail::shape_str(hs_out.shape()));
    Tensor mu = slice_channels(hs_out, 0, M);
    Tensor sigma = clamp_min(softplus_t(slice_channels(hs_out, M, 2 * M)), kSigmaMin);
    return {mu, sigma};
}

// p = Phi((v - mu + 1/2)/sigma) - Phi((v - mu - 1/2)/sigma), floored at
// eps_p. Evaluated in the symmetric form around |v - mu| so both CDF terms
// stay in the well-conditioned tail.
inline Tensor gaussian_likelihood(const Tensor& v, const Tensor& mu, const Tensor& sigma) {
    detail::check_same_shape(v, mu, "gaussian_likelihood");
    detail::check_same_shape(v, sigma, "gaussian_likelihood");
    detail::check_finite(v, "gaussian_likelihood");
    Tensor s = clamp_min(sigma, kSigmaMin);
    Tensor d = abs_t(sub(v, mu));
    Tensor upper = normal_cdf(div(add_scalar(neg(d), 0.5), s));
    Tensor lower = normal_cdf(div(add_scalar(neg(d), -0.5), s));
    return clamp_min(sub(upper, lower), kEpsP);
}

// ---------------------------------------------------------------------------
// Rate accounting
// ---------------------------------------------------------------------------

// bpp = sum(-log2 p) / num_pixels, with num_pixels the H*W of the source
// image (not the latent).
inline double bits_estimate(const Tensor& likelihoods, int64_t num_pixels) {
    if (num_pixels < 1) throw ContractError("bits_estimate: num_pixels must be >= 1");
    double bits = 0.0;
    for (double p : likelihoods.data()) {
        if (p <= 0.0)
            throw ContractError("bits_estimate: non-positive likelihood " +
                                std::to_string(p));
        bits -= std::log2(p);
    }
    return bits / static_cast<double>(num_pixels);
}

}  // namespace lic
