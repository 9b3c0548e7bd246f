#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "lic/error.hpp"
#include "lic/rng.hpp"

namespace lic {

namespace detail {

inline std::string shape_str(const std::vector<int64_t>& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline int64_t div_floor(int64_t a, int64_t b) {
    return a >= 0 ? a / b : -((-a + b - 1) / b);
}

inline int64_t div_ceil(int64_t a, int64_t b) {
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

}  // namespace detail

// Global (per-thread) autograd switch. Ops recorded while disabled produce
// plain constants with no history.
inline bool& grad_enabled() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled()) { grad_enabled() = false; }
    ~NoGradGuard() { grad_enabled() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Execution-order stamps. Every node records the stamp at which it was
// created; backward() replays nodes in strictly decreasing stamp order,
// which is exactly reverse execution order and therefore a valid reverse
// topological order (parents are always created before children).
class Tape {
public:
    static uint64_t stamp() { return ++counter(); }

private:
    static uint64_t& counter() {
        thread_local uint64_t n = 0;
        return n;
    }
};

// One vertex of the computation graph. Values and gradients are dense
// row-major double buffers; shapes are [B,C,H,W] for image-like data and
// 1-D for biases and scalars.
struct Node {
    std::vector<int64_t> shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first needed
    bool requires_grad = false;
    uint64_t seq = 0;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad and accumulates into the parents' grad buffers.
    std::function<void(Node&)> backprop;

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }

    bool is_leaf() const { return parents.empty(); }

    std::vector<double>& grad_buf() {
        if (static_cast<int64_t>(grad.size()) != numel()) grad.assign(numel(), 0.0);
        return grad;
    }
};

// Value-semantics handle over a shared graph node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false) {
        return full(std::move(shape), 0.0, requires_grad);
    }

    static Tensor full(std::vector<int64_t> shape, double v, bool requires_grad = false) {
        auto n = fresh_leaf(std::move(shape), requires_grad);
        n->value.assign(n->numel(), v);
        return Tensor(std::move(n));
    }

    static Tensor from_data(std::vector<int64_t> shape, std::vector<double> data,
                            bool requires_grad = false) {
        auto n = fresh_leaf(std::move(shape), requires_grad);
        if (static_cast<int64_t>(data.size()) != n->numel())
            throw DimensionError("from_data: buffer of " + std::to_string(data.size()) +
                                 " values does not fill shape " + detail::shape_str(n->shape));
        n->value = std::move(data);
        return Tensor(std::move(n));
    }

    static Tensor uniform(std::vector<int64_t> shape, double lo, double hi, Rng& rng,
                          bool requires_grad = false) {
        auto n = fresh_leaf(std::move(shape), requires_grad);
        n->value.resize(n->numel());
        for (auto& v : n->value) v = rng.uniform(lo, hi);
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return full({1}, v, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const std::shared_ptr<Node>& node() const { return node_; }

    const std::vector<int64_t>& shape() const { return node_->shape; }
    size_t ndim() const { return node_->shape.size(); }
    int64_t dim(size_t i) const { return node_->shape[i]; }
    int64_t numel() const { return node_->numel(); }

    std::vector<double>& data() { return node_->value; }
    const std::vector<double>& data() const { return node_->value; }

    std::vector<double>& grad() { return node_->grad_buf(); }
    bool has_grad() const { return !node_->grad.empty(); }

    bool requires_grad() const { return node_->requires_grad; }

    // Only leaves may change their flag; the flag of an interior node is a
    // fact about the recorded graph, not a setting.
    void set_requires_grad(bool rg) {
        if (!node_->is_leaf())
            throw ContractError("set_requires_grad: only leaf tensors may be toggled");
        node_->requires_grad = rg;
    }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    double item() const {
        if (numel() != 1)
            throw DimensionError("item: tensor of shape " + detail::shape_str(shape()) +
                                 " is not a scalar");
        return node_->value[0];
    }

    // Copy of the value with no history.
    Tensor detach() const {
        auto n = fresh_leaf(node_->shape, false);
        n->value = node_->value;
        return Tensor(std::move(n));
    }

private:
    static std::shared_ptr<Node> fresh_leaf(std::vector<int64_t> shape, bool requires_grad) {
        for (int64_t d : shape)
            if (d <= 0)
                throw DimensionError("tensor dimensions must be positive, got " +
                                     detail::shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        n->seq = Tape::stamp();
        return n;
    }

    std::shared_ptr<Node> node_;
};

// Creates an interior node. If grad mode is off or no parent requires grad,
// the history is dropped and the result is a constant leaf. This is the one
// entry point every op (including user-defined composite ops) goes through.
inline Tensor make_op(std::vector<int64_t> shape, std::vector<double> value,
                      const std::vector<Tensor>& parents,
                      std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->seq = Tape::stamp();
    bool track = grad_enabled();
    if (track) {
        bool any = false;
        for (const auto& p : parents) any = any || p.node()->requires_grad;
        track = any;
    }
    if (track) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return Tensor(std::move(n));
}

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    const int64_t n = a.numel();
    std::vector<double> out(n);
    const auto& av = a.data();
    const auto& bv = b.data();
    for (int64_t i = 0; i < n; ++i) out[i] = av[i] + bv[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [pa, pb, n](Node& self) {
        if (pa->requires_grad) {
            auto& g = pa->grad_buf();
            for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->grad_buf();
            for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    const int64_t n = a.numel();
    std::vector<double> out(n);
    const auto& av = a.data();
    const auto& bv = b.data();
    for (int64_t i = 0; i < n; ++i) out[i] = av[i] - bv[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [pa, pb, n](Node& self) {
        if (pa->requires_grad) {
            auto& g = pa->grad_buf();
            for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->grad_buf();
            for (int64_t i = 0; i < n; ++i) g[i] -= self.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    const int64_t n = a.numel();
    std::vector<double> out(n);
    const auto& av = a.data();
    const auto& bv = b.data();
    for (int64_t i = 0; i < n; ++i) out[i] = av[i] * bv[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [pa, pb, n](Node& self) {
        if (pa->requires_grad) {
            auto& g = pa->grad_buf();
            for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->grad_buf();
            for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i] * pa->value[i];
        }
    });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "div");
    const int64_t n = a.numel();
    std::vector<double> out(n);
    const auto& av = a.data();
    const auto& bv = b.data();
    for (int64_t i = 0; i < n; ++i) out[i] = av[i] / bv[i];
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [pa, pb, n](Node& self) {
        if (pa->requires_grad) {
            auto& g = pa->grad_buf();
            for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i] / pb->value[i];
        }
        if (pb->requires_grad) {
            auto& g = pb->grad_buf();
            for (int64_t i = 0; i < n; ++i) {
                const double bi = pb->value[i];
                g[i] -= self.grad[i] * pa->value[i] / (bi * bi);
            }
        }
    });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    const int64_t n = a.numel();
    std::vector<double> out(n);
    const auto& av = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = av[i] + s;
    auto pa = a.node();
    return make_op(a.shape(), std::move(out), {a}, [pa, n](Node& self) {
        if (!pa->requires_grad) return;
        auto& g = pa->grad_buf();
        for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i];
    });
}

inline Tensor mul_scalar(const Tensor& a, double s) {
    const int64_t n = a.numel();
    std::vector<double> out(n);
    const auto& av = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = av[i] * s;
    auto pa = a.node();
    return make_op(a.shape(), std::move(out), {a}, [pa, n, s](Node& self) {
        if (!pa->requires_grad) return;
        auto& g = pa->grad_buf();
        for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i] * s;
    });
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

// ---------------------------------------------------------------------------
// Elementwise functions
// ---------------------------------------------------------------------------

namespace detail {

// Shared scaffolding: forward map plus a backward that sees (grad_out,
// input_value, output_value) per element.
template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd) {
    const int64_t n = a.numel();
    std::vector<double> out(n);
    const auto& av = a.data();
    for (int64_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
    auto pa = a.node();
    return make_op(a.shape(), std::move(out), {a}, [pa, n, bwd](Node& self) {
        if (!pa->requires_grad) return;
        auto& g = pa->grad_buf();
        for (int64_t i = 0; i < n; ++i)
            g[i] += self.grad[i] * bwd(pa->value[i], self.value[i]);
    });
}

}  // namespace detail

inline Tensor square(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Tensor sqrt_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / y; });
}

inline Tensor exp_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor tanh_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid_t(const Tensor& a) {
    return detail::unary_op(
        a,
        [](double x) {
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                            : std::exp(x) / (1.0 + std::exp(x));
        },
        [](double, double y) { return y * (1.0 - y); });
}

inline Tensor softplus_t(const Tensor& a) {
    return detail::unary_op(
        a,
        // max(x,0) + log1p(exp(-|x|)) is exact and never overflows
        [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
        [](double x, double) {
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                            : std::exp(x) / (1.0 + std::exp(x));
        });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor abs_t(const Tensor& a) {
    return detail::unary_op(
        a, [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// Standard normal CDF, evaluated via erfc so the far negative tail keeps
// full relative precision.
inline Tensor normal_cdf(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
    return detail::unary_op(
        a, [](double x) { return 0.5 * std::erfc(-x * inv_sqrt2); },
        [](double x, double) { return inv_sqrt_2pi * std::exp(-0.5 * x * x); });
}

inline Tensor clamp_min(const Tensor& a, double lo) {
    return detail::unary_op(
        a, [lo](double x) { return x < lo ? lo : x; },
        [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

inline Tensor clamp(const Tensor& a, double lo, double hi) {
    return detail::unary_op(
        a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
        [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions and views
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    const int64_t n = a.numel();
    const auto& av = a.data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += av[i];
    auto pa = a.node();
    return make_op({1}, {acc}, {a}, [pa, n](Node& self) {
        if (!pa->requires_grad) return;
        auto& g = pa->grad_buf();
        const double go = self.grad[0];
        for (int64_t i = 0; i < n; ++i) g[i] += go;
    });
}

inline Tensor mean(const Tensor& a) {
    const int64_t n = a.numel();
    const auto& av = a.data();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += av[i];
    acc /= static_cast<double>(n);
    auto pa = a.node();
    return make_op({1}, {acc}, {a}, [pa, n](Node& self) {
        if (!pa->requires_grad) return;
        auto& g = pa->grad_buf();
        const double go = self.grad[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) g[i] += go;
    });
}

// Channel slice [c0, c1) of a [B,C,H,W] tensor.
inline Tensor slice_channels(const Tensor& a, int64_t c0, int64_t c1) {
    if (a.ndim() != 4)
        throw DimensionError("slice_channels: expected 4-D input, got " +
                             detail::shape_str(a.shape()));
    const int64_t B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
    if (c0 < 0 || c1 > C || c0 >= c1)
        throw DimensionError("slice_channels: range [" + std::to_string(c0) + "," +
                             std::to_string(c1) + ") invalid for C=" + std::to_string(C));
    const int64_t Cs = c1 - c0, hw = H * W;
    std::vector<double> out(B * Cs * hw);
    const auto& av = a.data();
    for (int64_t b = 0; b < B; ++b)
        std::copy(av.begin() + (b * C + c0) * hw, av.begin() + (b * C + c1) * hw,
                  out.begin() + b * Cs * hw);
    auto pa = a.node();
    return make_op({B, Cs, H, W}, std::move(out), {a}, [pa, B, C, c0, Cs, hw](Node& self) {
        if (!pa->requires_grad) return;
        auto& g = pa->grad_buf();
        for (int64_t b = 0; b < B; ++b) {
            const double* src = self.grad.data() + b * Cs * hw;
            double* dst = g.data() + (b * C + c0) * hw;
            for (int64_t i = 0; i < Cs * hw; ++i) dst[i] += src[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

namespace detail {

// Inclusive output-row range [lo,hi] for one kernel offset: the rows o for
// which  0 <= o*stride - pad + kk < limit  and  0 <= o < out_limit.
struct TapRange {
    int64_t lo, hi;
};

inline TapRange tap_range(int64_t kk, int64_t stride, int64_t pad, int64_t limit,
                          int64_t out_limit) {
    const int64_t lo = std::max<int64_t>(0, div_ceil(pad - kk, stride));
    const int64_t hi = std::min(out_limit - 1, div_floor(limit - 1 + pad - kk, stride));
    return {lo, hi};
}

inline void check_conv_args(int64_t stride, int64_t padding) {
    if (stride < 1) throw DimensionError("conv: stride must be >= 1");
    if (padding < 0) throw DimensionError("conv: padding must be >= 0");
}

}  // namespace detail

// 2-D cross-correlation. input [B,Cin,H,W], weight [Cout,Cin,k,k], optional
// bias [Cout]. Output H' = floor((H + 2p - k)/s) + 1 and likewise for W.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     int64_t stride, int64_t padding) {
    detail::check_conv_args(stride, padding);
    if (input.ndim() != 4 || weight.ndim() != 4)
        throw DimensionError("conv2d: input and weight must be 4-D, got " +
                             detail::shape_str(input.shape()) + " and " +
                             detail::shape_str(weight.shape()));
    const int64_t B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int64_t Cout = weight.dim(0), K = weight.dim(2);
    if (weight.dim(1) != Cin)
        throw DimensionError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                             " input channels, input has " + std::to_string(Cin));
    if (weight.dim(3) != K)
        throw DimensionError("conv2d: kernel must be square, got " +
                             detail::shape_str(weight.shape()));
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != Cout))
        throw DimensionError("conv2d: bias must have shape [" + std::to_string(Cout) + "]");
    const int64_t OH = (H + 2 * padding - K) / stride + 1;
    const int64_t OW = (W + 2 * padding - K) / stride + 1;
    if (H + 2 * padding < K || W + 2 * padding < K)
        throw DimensionError("conv2d: kernel " + std::to_string(K) +
                             " exceeds padded input " + detail::shape_str(input.shape()));

    std::vector<double> out(B * Cout * OH * OW, 0.0);
    const auto& X = input.data();
    const auto& Wd = weight.data();
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t co = 0; co < Cout; ++co) {
            double* out0 = out.data() + (b * Cout + co) * OH * OW;
            for (int64_t ci = 0; ci < Cin; ++ci) {
                const double* in0 = X.data() + (b * Cin + ci) * H * W;
                for (int64_t kh = 0; kh < K; ++kh) {
                    const auto rh = detail::tap_range(kh, stride, padding, H, OH);
                    for (int64_t kw = 0; kw < K; ++kw) {
                        const auto rw = detail::tap_range(kw, stride, padding, W, OW);
                        if (rh.lo > rh.hi || rw.lo > rw.hi) continue;
                        const double wv = Wd[((co * Cin + ci) * K + kh) * K + kw];
                        for (int64_t oh = rh.lo; oh <= rh.hi; ++oh) {
                            const int64_t ih = oh * stride - padding + kh;
                            const double* irow =
                                in0 + ih * W + (rw.lo * stride - padding + kw);
                            double* orow = out0 + oh * OW + rw.lo;
                            for (int64_t ow = rw.lo; ow <= rw.hi; ++ow) {
                                *orow++ += wv * *irow;
                                irow += stride;
                            }
                        }
                    }
                }
            }
            if (bias.defined()) {
                const double bv = bias.data()[co];
                for (int64_t i = 0; i < OH * OW; ++i) out0[i] += bv;
            }
        }
    }

    std::vector<Tensor> parents = {input, weight};
    if (bias.defined()) parents.push_back(bias);
    auto pin = input.node();
    auto pw = weight.node();
    auto pb = bias.defined() ? bias.node() : nullptr;
    auto bwd = [pin, pw, pb, B, Cin, H, W, Cout, K, OH, OW, stride, padding](Node& self) {
        const std::vector<double>& G = self.grad;
        if (pb && pb->requires_grad) {
            auto& gb = pb->grad_buf();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t co = 0; co < Cout; ++co) {
                    const double* g0 = G.data() + (b * Cout + co) * OH * OW;
                    double acc = 0.0;
                    for (int64_t i = 0; i < OH * OW; ++i) acc += g0[i];
                    gb[co] += acc;
                }
        }
        if (pw->requires_grad) {
            auto& gw = pw->grad_buf();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t co = 0; co < Cout; ++co) {
                    const double* g0 = G.data() + (b * Cout + co) * OH * OW;
                    for (int64_t ci = 0; ci < Cin; ++ci) {
                        const double* in0 = pin->value.data() + (b * Cin + ci) * H * W;
                        for (int64_t kh = 0; kh < K; ++kh) {
                            const auto rh = detail::tap_range(kh, stride, padding, H, OH);
                            for (int64_t kw = 0; kw < K; ++kw) {
                                const auto rw =
                                    detail::tap_range(kw, stride, padding, W, OW);
                                if (rh.lo > rh.hi || rw.lo > rw.hi) continue;
                                double acc = 0.0;
                                for (int64_t oh = rh.lo; oh <= rh.hi; ++oh) {
                                    const int64_t ih = oh * stride - padding + kh;
                                    const double* irow =
                                        in0 + ih * W + (rw.lo * stride - padding + kw);
                                    const double* grow = g0 + oh * OW + rw.lo;
                                    for (int64_t ow = rw.lo; ow <= rw.hi; ++ow) {
                                        acc += *grow++ * *irow;
                                        irow += stride;
                                    }
                                }
                                gw[((co * Cin + ci) * K + kh) * K + kw] += acc;
                            }
                        }
                    }
                }
        }
        if (pin->requires_grad) {
            auto& gx = pin->grad_buf();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t co = 0; co < Cout; ++co) {
                    const double* g0 = G.data() + (b * Cout + co) * OH * OW;
                    for (int64_t ci = 0; ci < Cin; ++ci) {
                        double* gx0 = gx.data() + (b * Cin + ci) * H * W;
                        for (int64_t kh = 0; kh < K; ++kh) {
                            const auto rh = detail::tap_range(kh, stride, padding, H, OH);
                            for (int64_t kw = 0; kw < K; ++kw) {
                                const auto rw =
                                    detail::tap_range(kw, stride, padding, W, OW);
                                if (rh.lo > rh.hi || rw.lo > rw.hi) continue;
                                const double wv =
                                    pw->value[((co * Cin + ci) * K + kh) * K + kw];
                                for (int64_t oh = rh.lo; oh <= rh.hi; ++oh) {
                                    const int64_t ih = oh * stride - padding + kh;
                                    double* xrow =
                                        gx0 + ih * W + (rw.lo * stride - padding + kw);
                                    const double* grow = g0 + oh * OW + rw.lo;
                                    for (int64_t ow = rw.lo; ow <= rw.hi; ++ow) {
                                        *xrow += wv * *grow++;
                                        xrow += stride;
                                    }
                                }
                            }
                        }
                    }
                }
        }
    };
    return make_op({B, Cout, OH, OW}, std::move(out), parents, std::move(bwd));
}

inline Tensor conv2d(const Tensor& input, const Tensor& weight, int64_t stride,
                     int64_t padding) {
    return conv2d(input, weight, Tensor(), stride, padding);
}

// Transposed 2-D convolution (exact adjoint of conv2d when given the same
// weight buffer). input [B,Cin,H,W], weight [Cin,Cout,k,k], optional bias
// [Cout]. Output H'' = (H - 1)*s - 2p + k + output_padding.
inline Tensor conv2d_transpose(const Tensor& input, const Tensor& weight, const Tensor& bias,
                               int64_t stride, int64_t padding, int64_t output_padding) {
    detail::check_conv_args(stride, padding);
    if (output_padding < 0 || output_padding >= stride)
        throw DimensionError("conv2d_transpose: output_padding must lie in [0, stride)");
    if (input.ndim() != 4 || weight.ndim() != 4)
        throw DimensionError("conv2d_transpose: input and weight must be 4-D, got " +
                             detail::shape_str(input.shape()) + " and " +
                             detail::shape_str(weight.shape()));
    const int64_t B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int64_t Cout = weight.dim(1), K = weight.dim(2);
    if (weight.dim(0) != Cin)
        throw DimensionError("conv2d_transpose: weight expects " +
                             std::to_string(weight.dim(0)) + " input channels, input has " +
                             std::to_string(Cin));
    if (weight.dim(3) != K)
        throw DimensionError("conv2d_transpose: kernel must be square, got " +
                             detail::shape_str(weight.shape()));
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != Cout))
        throw DimensionError("conv2d_transpose: bias must have shape [" +
                             std::to_string(Cout) + "]");
    const int64_t OH = (H - 1) * stride - 2 * padding + K + output_padding;
    const int64_t OW = (W - 1) * stride - 2 * padding + K + output_padding;
    if (OH < 1 || OW < 1)
        throw DimensionError("conv2d_transpose: output would be empty for input " +
                             detail::shape_str(input.shape()));

    std::vector<double> out(B * Cout * OH * OW, 0.0);
    const auto& X = input.data();
    const auto& Wd = weight.data();
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t ci = 0; ci < Cin; ++ci) {
            const double* in0 = X.data() + (b * Cin + ci) * H * W;
            for (int64_t co = 0; co < Cout; ++co) {
                double* out0 = out.data() + (b * Cout + co) * OH * OW;
                for (int64_t kh = 0; kh < K; ++kh) {
                    const auto rh = detail::tap_range(kh, stride, padding, OH, H);
                    for (int64_t kw = 0; kw < K; ++kw) {
                        const auto rw = detail::tap_range(kw, stride, padding, OW, W);
                        if (rh.lo > rh.hi || rw.lo > rw.hi) continue;
                        const double wv = Wd[((ci * Cout + co) * K + kh) * K + kw];
                        for (int64_t ih = rh.lo; ih <= rh.hi; ++ih) {
                            const int64_t oh = ih * stride - padding + kh;
                            const double* irow = in0 + ih * W + rw.lo;
                            double* orow =
                                out0 + oh * OW + (rw.lo * stride - padding + kw);
                            for (int64_t iw = rw.lo; iw <= rw.hi; ++iw) {
                                *orow += wv * *irow++;
                                orow += stride;
                            }
                        }
                    }
                }
            }
        }
        if (bias.defined()) {
            for (int64_t co = 0; co < Cout; ++co) {
                double* out0 = out.data() + (b * Cout + co) * OH * OW;
                const double bv = bias.data()[co];
                for (int64_t i = 0; i < OH * OW; ++i) out0[i] += bv;
            }
        }
    }

    std::vector<Tensor> parents = {input, weight};
    if (bias.defined()) parents.push_back(bias);
    auto pin = input.node();
    auto pw = weight.node();
    auto pb = bias.defined() ? bias.node() : nullptr;
    auto bwd = [pin, pw, pb, B, Cin, H, W, Cout, K, OH, OW, stride, padding](Node& self) {
        const std::vector<double>& G = self.grad;
        if (pb && pb->requires_grad) {
            auto& gb = pb->grad_buf();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t co = 0; co < Cout; ++co) {
                    const double* g0 = G.data() + (b * Cout + co) * OH * OW;
                    double acc = 0.0;
                    for (int64_t i = 0; i < OH * OW; ++i) acc += g0[i];
                    gb[co] += acc;
                }
        }
        if (pw->requires_grad) {
            auto& gw = pw->grad_buf();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t ci = 0; ci < Cin; ++ci) {
                    const double* in0 = pin->value.data() + (b * Cin + ci) * H * W;
                    for (int64_t co = 0; co < Cout; ++co) {
                        const double* g0 = G.data() + (b * Cout + co) * OH * OW;
                        for (int64_t kh = 0; kh < K; ++kh) {
                            const auto rh = detail::tap_range(kh, stride, padding, OH, H);
                            for (int64_t kw = 0; kw < K; ++kw) {
                                const auto rw =
                                    detail::tap_range(kw, stride, padding, OW, W);
                                if (rh.lo > rh.hi || rw.lo > rw.hi) continue;
                                double acc = 0.0;
                                for (int64_t ih = rh.lo; ih <= rh.hi; ++ih) {
                                    const int64_t oh = ih * stride - padding + kh;
                                    const double* irow = in0 + ih * W + rw.lo;
                                    const double* grow =
                                        g0 + oh * OW + (rw.lo * stride - padding + kw);
                                    for (int64_t iw = rw.lo; iw <= rw.hi; ++iw) {
                                        acc += *irow++ * *grow;
                                        grow += stride;
                                    }
                                }
                                gw[((ci * Cout + co) * K + kh) * K + kw] += acc;
                            }
                        }
                    }
                }
        }
        if (pin->requires_grad) {
            auto& gx = pin->grad_buf();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t ci = 0; ci < Cin; ++ci) {
                    double* gx0 = gx.data() + (b * Cin + ci) * H * W;
                    for (int64_t co = 0; co < Cout; ++co) {
                        const double* g0 = G.data() + (b * Cout + co) * OH * OW;
                        for (int64_t kh = 0; kh < K; ++kh) {
                            const auto rh = detail::tap_range(kh, stride, padding, OH, H);
                            for (int64_t kw = 0; kw < K; ++kw) {
                                const auto rw =
                                    detail::tap_range(kw, stride, padding, OW, W);
                                if (rh.lo > rh.hi || rw.lo > rw.hi) continue;
                                const double wv =
                                    pw->value[((ci * Cout + co) * K + kh) * K + kw];
                                for (int64_t ih = rh.lo; ih <= rh.hi; ++ih) {
                                    const int64_t oh = ih * stride - padding + kh;
                                    double* xrow = gx0 + ih * W + rw.lo;
                                    const double* grow =
                                        g0 + oh * OW + (rw.lo * stride - padding + kw);
                                    for (int64_t iw = rw.lo; iw <= rw.hi; ++iw) {
                                        *xrow++ += wv * *grow;
                                        grow += stride;
                                    }
                                }
                            }
                        }
                    }
                }
        }
    };
    return make_op({B, Cout, OH, OW}, std::move(out), parents, std::move(bwd));
}

inline Tensor conv2d_transpose(const Tensor& input, const Tensor& weight, int64_t stride,
                               int64_t padding, int64_t output_padding) {
    return conv2d_transpose(input, weight, Tensor(), stride, padding, output_padding);
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Interior gradients are cleared at
// the start of every call; leaf gradients accumulate across calls until the
// caller zeroes them (the optimizer does this after each step).
inline void backward(const Tensor& loss) {
    if (!loss.defined()) throw ContractError("backward: undefined tensor");
    if (loss.numel() != 1)
        throw ContractError("backward: loss must be scalar, got shape " +
                            detail::shape_str(loss.shape()));
    if (!loss.requires_grad())
        throw ContractError("backward: loss does not require grad (no graph recorded)");

    // Collect the subgraph reachable from the loss.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack = {loss.node().get()};
    seen.insert(stack[0]);
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents)
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    // Decreasing stamp order == reverse execution order.
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->seq > b->seq; });

    for (Node* n : order) {
        if (n->is_leaf())
            n->grad_buf();  // ensure allocated, keep accumulated values
        else
            n->grad.assign(n->numel(), 0.0);
    }
    loss.node()->grad_buf()[0] += 1.0;

    for (Node* n : order)
        if (n->backprop) n->backprop(*n);
}

// ---------------------------------------------------------------------------
// Numerical gradient check
// ---------------------------------------------------------------------------

// Central-difference verification of reverse-mode gradients. Returns the
// maximum relative error max |a - d| / max(|a|, |d|, 1e-8) over every
// element of every input that requires grad.
inline double gradient_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                             const std::vector<Tensor>& inputs, double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3))
        throw ContractError("gradient_check: eps must lie in [1e-7, 1e-3], got " +
                            std::to_string(eps));

    for (const auto& t : inputs)
        if (t.requires_grad()) const_cast<Tensor&>(t).zero_grad();

    Tensor out = f(inputs);
    if (out.numel() != 1)
        throw ContractError("gradient_check: f must return a scalar");
    backward(out);

    double max_rel = 0.0;
    for (const auto& t : inputs) {
        if (!t.requires_grad()) continue;
        auto& node = *t.node();
        const std::vector<double> analytic = node.grad_buf();
        for (int64_t i = 0; i < node.numel(); ++i) {
            const double saved = node.value[i];
            double fp, fm;
            {
                NoGradGuard ng;
                node.value[i] = saved + eps;
                fp = f(inputs).item();
                node.value[i] = saved - eps;
                fm = f(inputs).item();
            }
            node.value[i] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[i];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

// ---------------------------------------------------------------------------
// Operator sugar
// ---------------------------------------------------------------------------

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator-(double s, const Tensor& a) { return add_scalar(neg(a), s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator/(const Tensor& a, double s) { return mul_scalar(a, 1.0 / s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace lic
