#include "mvc/objective.hpp"

#include <algorithm>
#include <cmath>

#include "mvc/errors.hpp"

namespace mvc {

LossBreakdown confidence_weighted_loss(const Tensor& pred, const Tensor& target,
                                       const Tensor& conf, const MaskPlan& plan,
                                       const LossConfig& cfg) {
    if (pred.rank() != 3)
        throw DimensionError("confidence_weighted_loss: pred must be [V,N,D], got " +
                             shape_str(pred.shape()));
    if (pred.shape() != target.shape())
        throw DimensionError("confidence_weighted_loss: pred " + shape_str(pred.shape()) +
                             " vs target " + shape_str(target.shape()));
    const int64_t V = pred.shape()[0], N = pred.shape()[1], D = pred.shape()[2];
    if (conf.shape() != Shape{V, N})
        throw DimensionError("confidence_weighted_loss: confidence " +
                             shape_str(conf.shape()) + " must be [V,N] = [" +
                             std::to_string(V) + "," + std::to_string(N) + "]");
    if (plan.n_views() != V || plan.grid.count() != N)
        throw DimensionError("confidence_weighted_loss: plan covers " +
                             std::to_string(plan.n_views()) + "x" +
                             std::to_string(plan.grid.count()) + " patches, inputs are " +
                             std::to_string(V) + "x" + std::to_string(N));
    const int64_t m_count = plan.total_masked();
    if (m_count == 0)
        throw DomainError("confidence_weighted_loss: empty mask set");

    const auto flags = plan.flat();
    std::vector<double> mask01(flags.size()), inv_mask01(flags.size());
    for (size_t i = 0; i < flags.size(); ++i) {
        mask01[i] = flags[i] ? 1.0 : 0.0;
        inv_mask01[i] = flags[i] ? 0.0 : 1.0;
    }
    const Tensor mask_t = Tensor::constant({V, N}, std::move(mask01));
    const Tensor inv_mask_t = Tensor::constant({V, N}, std::move(inv_mask01));

    // Per-patch squared residual norm, [V, N].
    Tensor r2 = sum_axis(square(sub(pred, target)), -1);
    Tensor weighted = mul(mul(add_const(conf, cfg.eps), r2), mask_t);

    // Unmasked confidences are replaced by 1 before the log so they cannot
    // trip the domain check; log(1) = 0 keeps them out of value and gradient.
    Tensor conf_or_one = add(mul(conf, mask_t), inv_mask_t);
    Tensor penalty = scale(log(conf_or_one), -cfg.lambda);

    const double inv_m = 1.0 / static_cast<double>(m_count);
    LossBreakdown out;
    out.weighted_mse = scale(sum_all(weighted), inv_m);
    out.confidence_penalty = scale(sum_all(penalty), inv_m);
    out.total = add(out.weighted_mse, out.confidence_penalty);
    out.masked_count = m_count;

    // Diagnostics (plain doubles, no gradient involvement).
    out.per_view_mse.assign(static_cast<size_t>(V), 0.0);
    const auto& r2v = r2.data();
    const auto& cv = conf.data();
    double conf_sum = 0.0;
    for (int64_t v = 0; v < V; ++v) {
        double sum = 0.0;
        int64_t cnt = 0;
        for (int64_t j = 0; j < N; ++j) {
            if (!flags[static_cast<size_t>(v * N + j)]) continue;
            sum += r2v[static_cast<size_t>(v * N + j)];
            conf_sum += cv[static_cast<size_t>(v * N + j)];
            ++cnt;
        }
        if (cnt > 0)
            out.per_view_mse[static_cast<size_t>(v)] =
                sum / (static_cast<double>(cnt) * static_cast<double>(D));
    }
    out.mean_confidence = conf_sum / static_cast<double>(m_count);
    return out;
}

double optimal_confidence(double r2, double lambda) {
    if (lambda <= 0.0) throw DomainError("optimal_confidence: lambda must be positive");
    constexpr double kLo = 1e-6;
    constexpr double kHi = 1.0 - 1e-6;
    if (r2 <= 0.0) return kHi; // zero residual wants maximal confidence
    return std::clamp(lambda / r2, kLo, kHi);
}

} // namespace mvc
