#pragma once

#include <cstdint>
#include <vector>

#include "mvc/tensor.hpp"

namespace mvc {

struct OptimConfig {
    double lr_peak = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.05;
    double grad_clip = 1.0;    // global norm ceiling; <= 0 disables clipping
    double warmup_frac = 0.05; // fraction of total steps spent in linear warmup
    int64_t total_steps = 1000;

    void validate() const;
};

// Learning rate at a 0-based step: linear from 0 to lr_peak over the warmup
// span, then cosine to 0 at total_steps.
double schedule_lr(const OptimConfig& cfg, int64_t step);

struct StepStats {
    bool applied = false;   // false when a non-finite gradient aborted the step
    double lr = 0.0;
    double grad_norm = 0.0; // pre-clip global norm
};

// Adaptive-moment optimizer with decoupled weight decay. Decay applies only
// to matrices and higher-rank tensors; biases, gains and other vectors are
// left undecayed.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, const OptimConfig& cfg);

    // Consumes the gradients currently attached to the parameters (a missing
    // gradient counts as zero). Steps with any non-finite gradient leave all
    // state untouched and report applied=false.
    StepStats step();

    int64_t steps_taken() const { return t_; }

    // Moment buffers, exposed for checkpointing the training state.
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

private:
    std::vector<Tensor> params_;
    OptimConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    int64_t t_ = 0;
};

} // namespace mvc
