#pragma once

#include <cmath>
#include <vector>

#include "lic/error.hpp"
#include "lic/tensor.hpp"

namespace lic {

// First/second moment estimates for one parameter tensor.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
};

// Adam with bias correction (Kingma & Ba). step() consumes the accumulated
// gradients and clears them, so each optimizer step starts from zero.
class Adam {
public:
    explicit Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        states_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            const size_t n = static_cast<size_t>(params_[i].numel());
            states_[i].m.assign(n, 0.0);
            states_[i].v.assign(n, 0.0);
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i];
            if (!p.has_grad())
                throw ContractError("adam_step: parameter " + std::to_string(i) +
                                    " has no gradient; call backward() first");
            auto& value = p.data();
            auto& grad = p.grad();
            auto& st = states_[i];
            for (size_t j = 0; j < value.size(); ++j) {
                const double g = grad[j];
                st.m[j] = beta1_ * st.m[j] + (1.0 - beta1_) * g;
                st.v[j] = beta2_ * st.v[j] + (1.0 - beta2_) * g * g;
                const double mhat = st.m[j] / bc1;
                const double vhat = st.v[j] / bc2;
                value[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
            p.zero_grad();
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    int64_t steps_taken() const { return t_; }
    double learning_rate() const { return lr_; }
    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    std::vector<AdamState> states_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

}  // namespace lic
