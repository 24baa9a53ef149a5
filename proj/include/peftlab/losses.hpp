#pragma once

#include "peftlab/tensor.hpp"

namespace peftlab {

// lambda blends bce against focal; single-instance scenes use lambda = 0.
struct LossConfig {
    double lambda = 0.25;
    double focal_gamma = 2.0;
    double focal_alpha = 0.25;
    double dice_eps = 1e-6;

    void validate() const;
};

// Mean binary cross-entropy on logits, computed in the softplus form so
// large |z| cannot overflow. Targets must be exactly 0 or 1.
Tensor bce(const Tensor& logits, const Tensor& targets);

// 1 - (2 sum(sigmoid(z) y) + eps) / (sum(sigmoid(z)) + sum(y) + eps).
// Both-empty inputs score a perfect 0 by the eps convention.
Tensor dice_loss(const Tensor& logits, const Tensor& targets, double eps = 1e-6);

// Mean of -alpha_t (1 - p_t)^gamma log(p_t) with p_t the probability of
// the true class and alpha_t = alpha for foreground, 1-alpha otherwise.
Tensor focal_loss(const Tensor& logits, const Tensor& targets, double gamma, double alpha);

// (1 - lambda) * bce + lambda * focal + dice.
Tensor composite_loss(const Tensor& logits, const Tensor& targets, const LossConfig& cfg);

}  // namespace peftlab
