#pragma once

#include <cmath>

#include "lic/entropy.hpp"
#include "lic/error.hpp"
#include "lic/tensor.hpp"

namespace lic {

// One training objective's value with its reported components. `total` stays
// graph-connected for backward(); the doubles are the logged breakdown and
// recombine to total exactly.
struct LossBreakdown {
    Tensor total;
    double rate_y_bits = 0.0;
    double rate_z_bits = 0.0;      // 0 for the factorized model
    double distortion_mse = 0.0;   // squared error, per-sample sum, batch mean
    double lambda = 0.0;

    double total_value() const { return total.item(); }
};

namespace detail {

// Batch dimension under the documented convention: leading extent of 4-D
// tensors, otherwise 1 (vectors in tests count as a single sample).
inline double batch_extent(const Tensor& t) {
    return t.ndim() == 4 ? static_cast<double>(t.dim(0)) : 1.0;
}

inline void check_likelihoods(const Tensor& p, const char* op) {
    for (double v : p.data())
        if (!(v > 0.0 && v <= 1.0))
            throw ContractError(std::string(op) + ": likelihood " + std::to_string(v) +
                                " outside (0,1]");
}

// sum(-log2 p) / batch as a graph node.
inline Tensor rate_bits(const Tensor& likelihoods) {
    return mul_scalar(sum(log_t(likelihoods)), -kInvLn2 / batch_extent(likelihoods));
}

}  // namespace detail

// Rate-distortion objective: sum(-log2 p_y)/batch + lambda * ||x - x_hat||^2,
// the squared error summed per sample and averaged over the batch, images on
// the [0,1] scale. The sum convention matches kd_loss; it keeps the rate term
// (bits per image) and the distortion term on commensurate scales, which is
// what makes the lambda grid span distinct operating points.
inline LossBreakdown rd_loss(const Tensor& x, const Tensor& x_hat,
                             const Tensor& y_likelihoods, double lambda) {
    detail::check_same_shape(x, x_hat, "rd_loss");
    detail::check_likelihoods(y_likelihoods, "rd_loss");
    Tensor rate = detail::rate_bits(y_likelihoods);
    Tensor dist =
        mul_scalar(sum(square(sub(x, x_hat))), 1.0 / detail::batch_extent(x));
    LossBreakdown out;
    out.total = add(rate, mul_scalar(dist, lambda));
    out.rate_y_bits = rate.item();
    out.distortion_mse = dist.item();
    out.lambda = lambda;
    return out;
}

// Rate-distortion objective with the hyper-latent's rate added and both rate
// terms reported separately.
inline LossBreakdown rd_loss_hyper(const Tensor& x, const Tensor& x_hat,
                                   const Tensor& y_likelihoods,
                                   const Tensor& z_likelihoods, double lambda) {
    detail::check_same_shape(x, x_hat, "rd_loss_hyper");
    detail::check_likelihoods(y_likelihoods, "rd_loss_hyper");
    detail::check_likelihoods(z_likelihoods, "rd_loss_hyper");
    Tensor rate_y = detail::rate_bits(y_likelihoods);
    Tensor rate_z = detail::rate_bits(z_likelihoods);
    Tensor dist =
        mul_scalar(sum(square(sub(x, x_hat))), 1.0 / detail::batch_extent(x));
    LossBreakdown out;
    out.total = add(add(rate_y, rate_z), mul_scalar(dist, lambda));
    out.rate_y_bits = rate_y.item();
    out.rate_z_bits = rate_z.item();
    out.distortion_mse = dist.item();
    out.lambda = lambda;
    return out;
}

// Latent distillation loss: squared differences summed over all
// elements, averaged over the batch. The teacher latent is detached here, so
// no gradient ever reaches teacher parameters.
inline Tensor kd_loss(const Tensor& y_teacher, const Tensor& y_student) {
    if (y_teacher.shape() != y_student.shape())
        throw DimensionError(
            "kd_loss: teacher/student latent shapes differ (" +
            detail::shape_str(y_teacher.shape()) + " vs " +
            detail::shape_str(y_student.shape()) +
            "); the reduction must preserve final widths");
    Tensor diff = sub(y_teacher.detach(), y_student);
    return mul_scalar(sum(square(diff)), 1.0 / detail::batch_extent(y_student));
}

// Hyper-model distillation loss: the latent term plus the hyper-latent
// term, both on pre-quantization latents.
inline Tensor kd_loss_hyper(const Tensor& y_teacher, const Tensor& z_teacher,
                            const Tensor& y_student, const Tensor& z_student) {
    return add(kd_loss(y_teacher, y_student), kd_loss(z_teacher, z_student));
}

}  // namespace lic
