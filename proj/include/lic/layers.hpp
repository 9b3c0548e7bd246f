#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "lic/error.hpp"
#include "lic/rng.hpp"
#include "lic/tensor.hpp"

namespace lic {

inline constexpr double kBetaMin = 1e-6;

// ---------------------------------------------------------------------------
// Declarative layer/network specs
// ---------------------------------------------------------------------------

enum class LayerKind { conv, deconv, gdn, igdn, relu };

enum class NetRole { g_a, g_s, h_a, h_s };

inline std::string to_string(NetRole r) {
    switch (r) {
        case NetRole::g_a: return "g_a";
        case NetRole::g_s: return "g_s";
        case NetRole::h_a: return "h_a";
        case NetRole::h_s: return "h_s";
    }
    return "?";
}

struct LayerSpec {
    LayerKind kind = LayerKind::conv;
    int64_t in_channels = 0;
    int64_t out_channels = 0;
    int64_t kernel = 0;
    int64_t stride = 1;
    int64_t padding = 0;
    int64_t output_padding = 0;  // deconv only

    static LayerSpec conv(int64_t cin, int64_t cout, int64_t k, int64_t s, int64_t p) {
        return {LayerKind::conv, cin, cout, k, s, p, 0};
    }
    static LayerSpec deconv(int64_t cin, int64_t cout, int64_t k, int64_t s, int64_t p,
                            int64_t op) {
        return {LayerKind::deconv, cin, cout, k, s, p, op};
    }
    static LayerSpec gdn(int64_t c) { return {LayerKind::gdn, c, c, 0, 1, 0, 0}; }
    static LayerSpec igdn(int64_t c) { return {LayerKind::igdn, c, c, 0, 1, 0, 0}; }
    static LayerSpec relu(int64_t c) { return {LayerKind::relu, c, c, 0, 1, 0, 0}; }
};

struct NetworkSpec {
    NetRole role = NetRole::g_a;
    std::vector<LayerSpec> layers;
    int64_t latent_channels = 0;  // encoder output width (decoders: their input width)
};

inline void validate_spec(const NetworkSpec& spec) {
    if (spec.layers.empty()) throw ContractError("network spec has no layers");
    int64_t width = spec.layers.front().in_channels;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        if (l.in_channels < 1 || l.out_channels < 1)
            throw ContractError("layer " + std::to_string(i) + " has non-positive channels");
        if (l.in_channels != width)
            throw ContractError("layer " + std::to_string(i) + " expects " +
                                std::to_string(l.in_channels) + " channels, gets " +
                                std::to_string(width));
        switch (l.kind) {
            case LayerKind::gdn:
            case LayerKind::igdn:
            case LayerKind::relu:
                if (l.in_channels != l.out_channels)
                    throw ContractError("pointwise layer " + std::to_string(i) +
                                        " must preserve channel count");
                break;
            case LayerKind::conv:
                if (l.kernel < 1 || l.stride < 1 || l.padding < 0)
                    throw ContractError("conv layer " + std::to_string(i) +
                                        " has invalid geometry");
                break;
            case LayerKind::deconv:
                if (l.kernel < 1 || l.stride < 1 || l.padding < 0 ||
                    l.output_padding < 0 || l.output_padding >= l.stride)
                    throw ContractError("deconv layer " + std::to_string(i) +
                                        " has invalid geometry");
                break;
        }
        width = l.out_channels;
    }
}

// ---------------------------------------------------------------------------
// Reference architectures
// ---------------------------------------------------------------------------

// Factorized-prior transforms: four stride-2 5x5 stages, GDN between encoder
// stages, mirrored IGDN/deconv decoder. Total downsampling 16x.
inline std::pair<NetworkSpec, NetworkSpec> build_factorized_codec(int64_t N, int64_t M) {
    if (N < 1 || M < 1) throw ContractError("build_factorized_codec: N, M must be >= 1");
    NetworkSpec ga{NetRole::g_a,
                   {LayerSpec::conv(3, N, 5, 2, 2), LayerSpec::gdn(N),
                    LayerSpec::conv(N, N, 5, 2, 2), LayerSpec::gdn(N),
                    LayerSpec::conv(N, N, 5, 2, 2), LayerSpec::gdn(N),
                    LayerSpec::conv(N, M, 5, 2, 2)},
                   M};
    NetworkSpec gs{NetRole::g_s,
                   {LayerSpec::deconv(M, N, 5, 2, 2, 1), LayerSpec::igdn(N),
                    LayerSpec::deconv(N, N, 5, 2, 2, 1), LayerSpec::igdn(N),
                    LayerSpec::deconv(N, N, 5, 2, 2, 1), LayerSpec::igdn(N),
                    LayerSpec::deconv(N, 3, 5, 2, 2, 1)},
                   M};
    validate_spec(ga);
    validate_spec(gs);
    return {ga, gs};
}

// Hyper transforms: h_a maps the latent (M channels) to the hyper-latent
// (Mh channels, 4x further downsampling); h_s mirrors back up and emits
// 2*M channels (per-element mean and scale of the conditional model).
inline std::pair<NetworkSpec, NetworkSpec> build_hyper_codec(int64_t M, int64_t Nh,
                                                             int64_t Mh) {
    if (M < 1 || Nh < 1 || Mh < 1)
        throw ContractError("build_hyper_codec: all channel counts must be >= 1");
    NetworkSpec ha{NetRole::h_a,
                   {LayerSpec::conv(M, Nh, 3, 1, 1), LayerSpec::relu(Nh),
                    LayerSpec::conv(Nh, Nh, 5, 2, 2), LayerSpec::relu(Nh),
                    LayerSpec::conv(Nh, Mh, 5, 2, 2)},
                   Mh};
    NetworkSpec hs{NetRole::h_s,
                   {LayerSpec::deconv(Mh, Nh, 5, 2, 2, 1), LayerSpec::relu(Nh),
                    LayerSpec::deconv(Nh, Nh, 5, 2, 2, 1), LayerSpec::relu(Nh),
                    LayerSpec::conv(Nh, 2 * M, 3, 1, 1)},
                   Mh};
    validate_spec(ha);
    validate_spec(hs);
    return {ha, hs};
}

// ---------------------------------------------------------------------------
// Width reduction
// ---------------------------------------------------------------------------

struct ReductionSpec {
    int64_t r = 1;
    std::vector<NetRole> applies_to = {NetRole::g_a, NetRole::h_a};
};

inline int64_t reduced_width(int64_t width, int64_t r) {
    // round-half-up, floored at 1
    return std::max<int64_t>(1, static_cast<int64_t>(
                                    std::floor(static_cast<double>(width) / r + 0.5)));
}

// Shrinks every intermediate channel count by r. The first layer's input and
// the last layer's output stay untouched so the latent shape (and hence the
// frozen decoder) still fits.
inline NetworkSpec reduce_width(const NetworkSpec& spec, const ReductionSpec& reduction) {
    if (reduction.r < 1) throw ContractError("reduce_width: r must be >= 1");
    bool applicable = false;
    for (NetRole role : reduction.applies_to) applicable = applicable || role == spec.role;
    if (!applicable)
        throw ContractError("reduce_width: role " + to_string(spec.role) +
                            " is not in the reduction's applies_to list");
    validate_spec(spec);

    // Channel widths at every layer boundary; interior entries shrink.
    std::vector<int64_t> widths;
    widths.push_back(spec.layers.front().in_channels);
    for (const LayerSpec& l : spec.layers) widths.push_back(l.out_channels);
    for (size_t i = 1; i + 1 < widths.size(); ++i)
        widths[i] = reduced_width(widths[i], reduction.r);

    NetworkSpec out = spec;
    for (size_t i = 0; i < out.layers.size(); ++i) {
        out.layers[i].in_channels = widths[i];
        out.layers[i].out_channels = widths[i + 1];
    }
    validate_spec(out);
    return out;
}

// ---------------------------------------------------------------------------
// GDN
// ---------------------------------------------------------------------------

// View over one GDN layer's parameters: beta [C], gamma [C,C,1,1].
struct GdnParams {
    Tensor beta;
    Tensor gamma;
    bool inverse = false;
};

// y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2); inverse mode multiplies.
// The norm pool is a 1x1 convolution with gamma as weights and beta as bias.
inline Tensor gdn_forward(const Tensor& x, const GdnParams& params) {
    for (double b : params.beta.data())
        if (b < kBetaMin)
            throw ContractError("gdn_forward: beta " + std::to_string(b) +
                                " below beta_min " + std::to_string(kBetaMin));
    for (double g : params.gamma.data())
        if (g < 0.0) throw ContractError("gdn_forward: negative gamma entry");
    Tensor norm = sqrt_t(conv2d(square(x), params.gamma, params.beta, 1, 0));
    return params.inverse ? mul(x, norm) : div(x, norm);
}

// ---------------------------------------------------------------------------
// Runtime network
// ---------------------------------------------------------------------------

// Init gain on the final conv of analysis networks (g_a, h_a). Fan-in scaled
// init leaves the latent at RMS ~0.04 on [0,1] images, far inside the +-0.5
// additive-noise dead zone, where the decoder gets no usable signal and
// training settles on ignoring the latent. The gain starts the latent around
// RMS ~2, outside the dead zone; the entropy model's initial code length is
// flat over this range, so the starting rate is unchanged.
inline constexpr double kLatentInitGain = 48.0;

// A NetworkSpec with materialized parameters. Convolution weights start
// uniform in +-sqrt(1/(k^2 * Cin)) with zero biases (the latent-emitting
// conv additionally gets kLatentInitGain); GDN starts as the near-identity
// beta=1, gamma=0.1*I.
class Network {
public:
    struct Layer {
        LayerSpec spec;
        Tensor weight, bias;  // conv/deconv
        Tensor beta, gamma;   // gdn/igdn
    };

    Network() = default;

    explicit Network(NetworkSpec spec, Rng* rng = nullptr) : spec_(std::move(spec)) {
        validate_spec(spec_);
        for (const LayerSpec& l : spec_.layers) {
            Layer layer{l, {}, {}, {}, {}};
            switch (l.kind) {
                case LayerKind::conv:
                case LayerKind::deconv: {
                    // deconv weights are stored [Cin, Cout, k, k]
                    std::vector<int64_t> wshape =
                        l.kind == LayerKind::conv
                            ? std::vector<int64_t>{l.out_channels, l.in_channels, l.kernel,
                                                   l.kernel}
                            : std::vector<int64_t>{l.in_channels, l.out_channels, l.kernel,
                                                   l.kernel};
                    const double bound =
                        std::sqrt(1.0 / (static_cast<double>(l.kernel) * l.kernel *
                                         l.in_channels));
                    layer.weight = rng ? Tensor::uniform(wshape, -bound, bound, *rng, true)
                                       : Tensor::zeros(wshape, true);
                    layer.bias = Tensor::zeros({l.out_channels}, true);
                    break;
                }
                case LayerKind::gdn:
                case LayerKind::igdn: {
                    const int64_t C = l.in_channels;
                    layer.beta = Tensor::full({C}, 1.0, true);
                    layer.gamma = Tensor::zeros({C, C, 1, 1}, true);
                    for (int64_t c = 0; c < C; ++c) layer.gamma.data()[c * C + c] = 0.1;
                    break;
                }
                case LayerKind::relu:
                    break;
            }
            layers_.push_back(std::move(layer));
        }
        if (rng && (spec_.role == NetRole::g_a || spec_.role == NetRole::h_a)) {
            for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
                if (!it->weight.defined()) continue;
                for (double& w : it->weight.data()) w *= kLatentInitGain;
                break;
            }
        }
    }

    bool empty() const { return layers_.empty(); }
    const NetworkSpec& spec() const { return spec_; }
    const std::vector<Layer>& layers() const { return layers_; }

    Tensor forward(const Tensor& x) const {
        Tensor h = x;
        for (const Layer& layer : layers_) {
            const LayerSpec& l = layer.spec;
            switch (l.kind) {
                case LayerKind::conv:
                    h = conv2d(h, layer.weight, layer.bias, l.stride, l.padding);
                    break;
                case LayerKind::deconv:
                    h = conv2d_transpose(h, layer.weight, layer.bias, l.stride, l.padding,
                                         l.output_padding);
                    break;
                case LayerKind::gdn:
                    h = gdn_forward(h, {layer.beta, layer.gamma, false});
                    break;
                case LayerKind::igdn:
                    h = gdn_forward(h, {layer.beta, layer.gamma, true});
                    break;
                case LayerKind::relu:
                    h = relu(h);
                    break;
            }
        }
        return h;
    }

    // Stable name -> tensor listing in layer order (used by the optimizer,
    // the checkpoint format, and freezing audits).
    std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const {
        std::vector<std::pair<std::string, Tensor>> out;
        for (size_t i = 0; i < layers_.size(); ++i) {
            const std::string base = prefix + "/layer" + std::to_string(i);
            const Layer& layer = layers_[i];
            if (layer.weight.defined()) {
                out.emplace_back(base + "/weight", layer.weight);
                out.emplace_back(base + "/bias", layer.bias);
            } else if (layer.beta.defined()) {
                out.emplace_back(base + "/beta", layer.beta);
                out.emplace_back(base + "/gamma", layer.gamma);
            }
        }
        return out;
    }

    std::vector<Tensor> params() const {
        std::vector<Tensor> out;
        for (auto& [name, t] : named_params("")) out.push_back(t);
        return out;
    }

    void set_requires_grad(bool rg) {
        for (auto& t : params()) t.set_requires_grad(rg);
    }

    // Restores the GDN positivity invariants after an optimizer step.
    void reproject() {
        for (Layer& layer : layers_) {
            if (!layer.beta.defined()) continue;
            for (double& b : layer.beta.data()) b = std::max(b, kBetaMin);
            for (double& g : layer.gamma.data()) g = std::max(g, 0.0);
        }
    }

    // Deep copy: fresh leaf tensors with identical values.
    Network clone() const {
        Network out;
        out.spec_ = spec_;
        for (const Layer& layer : layers_) {
            Layer copy{layer.spec, {}, {}, {}, {}};
            auto dup = [](const Tensor& t) {
                return t.defined()
                           ? Tensor::from_data(t.shape(), t.data(), t.requires_grad())
                           : Tensor();
            };
            copy.weight = dup(layer.weight);
            copy.bias = dup(layer.bias);
            copy.beta = dup(layer.beta);
            copy.gamma = dup(layer.gamma);
            out.layers_.push_back(std::move(copy));
        }
        return out;
    }

private:
    NetworkSpec spec_;
    std::vector<Layer> layers_;
};

}  // namespace lic
