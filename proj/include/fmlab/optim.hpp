#pragma once

#include <cstdint>

#include "fmlab/tensor.hpp"

namespace fmlab {

struct AdamWHyper {
    double lr_base = 3e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
};

struct OptimizerState {
    std::int64_t step = 0;
    ModelParams m;
    ModelParams v;
    AdamWHyper hyper;

    static OptimizerState init(const ModelParams& params, const AdamWHyper& hyper);
};

// Decoupled weight decay (p -= lr * wd * p) followed by the bias-corrected
// Adam delta. Throws NumericError naming the first non-finite gradient.
void adamw_step(OptimizerState& state, ModelParams& params, const ModelParams& grads, double lr);

// Linear warmup to base_lr over warmup_steps, then half-cosine down to 0 at
// total_steps. step is clamped into [0, total_steps].
double lr_at(std::int64_t step, std::int64_t total_steps, double base_lr, std::int64_t warmup_steps);

}  // namespace fmlab
