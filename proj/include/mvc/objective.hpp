#pragma once

#include "mvc/masking.hpp"
#include "mvc/tensor.hpp"

namespace mvc {

struct LossConfig {
    double eps = 0.1;    // additive confidence floor on the reconstruction term
    double lambda = 0.1; // weight of the log-confidence regularizer
};

struct LossBreakdown {
    Tensor total;              // scalar, tracked when inputs are
    Tensor weighted_mse;       // scalar: mean over masked patches of (c+eps)*|r|^2
    Tensor confidence_penalty; // scalar: mean over masked patches of -lambda*log(c)
    std::vector<double> per_view_mse; // per-pixel MSE over each view's masked patches
    double mean_confidence = 0.0;     // mean confidence over masked patches
    int64_t masked_count = 0;
};

// Confidence-weighted reconstruction loss over the masked patch set M:
//
//   L = (1/|M|) * sum_{(v,j) in M} [ (c_vj + eps) * |pred_vj - target_vj|^2
//                                    - lambda * log(c_vj) ]
//
// pred and target are [V, N, D] patch vectors (D = patch pixels), conf is
// [V, N] with entries in (0, 1). Unmasked patches contribute neither value
// nor gradient. An empty mask set is a domain error.
LossBreakdown confidence_weighted_loss(const Tensor& pred, const Tensor& target,
                                       const Tensor& conf, const MaskPlan& plan,
                                       const LossConfig& cfg = {});

// Minimizer of (c + eps) * r2 - lambda * log(c) over c, clamped into
// [1e-6, 1 - 1e-6]. The eps term does not depend on c, so the optimum is
// lambda / r2.
double optimal_confidence(double r2, double lambda);

} // namespace mvc
