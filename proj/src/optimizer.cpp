#include "mvc/optimizer.hpp"

#include <cmath>

#include "mvc/errors.hpp"

namespace mvc {

void OptimConfig::validate() const {
    if (lr_peak <= 0.0) throw ConfigError("optimizer: lr_peak must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw ConfigError("optimizer: betas must lie in [0, 1)");
    if (eps <= 0.0) throw ConfigError("optimizer: eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("optimizer: weight decay must be non-negative");
    if (warmup_frac < 0.0 || warmup_frac >= 1.0)
        throw ConfigError("optimizer: warmup fraction must lie in [0, 1)");
    if (total_steps < 1) throw ConfigError("optimizer: total_steps must be at least 1");
}

double schedule_lr(const OptimConfig& cfg, int64_t step) {
    const int64_t warmup = static_cast<int64_t>(
        std::llround(cfg.warmup_frac * static_cast<double>(cfg.total_steps)));
    if (warmup > 0 && step < warmup)
        return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(warmup);
    const int64_t tail = std::max<int64_t>(cfg.total_steps - warmup, 1);
    const double progress =
        std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(tail));
    return cfg.lr_peak * 0.5 * (1.0 + std::cos(M_PI * progress));
}

AdamW::AdamW(std::vector<Tensor> params, const OptimConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
        m_.emplace_back(static_cast<size_t>(p.size()), 0.0);
        v_.emplace_back(static_cast<size_t>(p.size()), 0.0);
    }
}

StepStats AdamW::step() {
    StepStats stats;
    stats.lr = schedule_lr(cfg_, t_);

    // Pass 1: global gradient norm, rejecting the step outright if anything
    // non-finite slipped through.
    double norm2 = 0.0;
    bool finite = true;
    for (const Tensor& p : params_) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) {
            if (!std::isfinite(g)) finite = false;
            norm2 += g * g;
        }
    }
    stats.grad_norm = std::sqrt(norm2);
    if (!finite || !std::isfinite(stats.grad_norm)) return stats;

    const double clip_scale = (cfg_.grad_clip > 0.0 && stats.grad_norm > cfg_.grad_clip)
                                  ? cfg_.grad_clip / stats.grad_norm
                                  : 1.0;

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        std::vector<double>& val = p.data_mut();
        std::vector<double>& m = m_[pi];
        std::vector<double>& v = v_[pi];
        const bool decay = cfg_.weight_decay > 0.0 && p.rank() >= 2;
        const std::vector<double>* grad = p.has_grad() ? &p.grad() : nullptr;
        for (size_t i = 0; i < val.size(); ++i) {
            const double g = grad ? (*grad)[i] * clip_scale : 0.0;
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            double upd = stats.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            if (decay) upd += stats.lr * cfg_.weight_decay * val[i];
            val[i] -= upd;
        }
    }
    stats.applied = true;
    return stats;
}

} // namespace mvc
