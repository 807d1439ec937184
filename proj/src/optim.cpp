#include "fmlab/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fmlab/errors.hpp"

namespace fmlab {

OptimizerState OptimizerState::init(const ModelParams& params, const AdamWHyper& hyper) {
    return OptimizerState{0, params.zeros_like(), params.zeros_like(), hyper};
}

void adamw_step(OptimizerState& state, ModelParams& params, const ModelParams& grads, double lr) {
    if (!(lr >= 0.0)) throw std::invalid_argument("adamw_step: learning rate must be >= 0");
    if (grads.size() != params.size() || state.m.size() != params.size()) {
        throw std::invalid_argument("adamw_step: params, grads and moments disagree on entries");
    }
    for (const auto& [name, g] : grads) {
        if (!g.all_finite()) throw NumericError("adamw_step: non-finite gradient in parameter '" + name + "'");
    }

    state.step += 1;
    const auto& h = state.hyper;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    const double decay = lr * h.weight_decay;

    for (auto& [name, p] : params) {
        const Tensor& g = grads.at(name);
        Tensor& m = state.m.at(name);
        Tensor& v = state.v.at(name);
        require_same_shape(p, g, "adamw_step grad");
        for (std::size_t i = 0; i < p.numel(); ++i) {
            p[i] -= decay * p[i];
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (std::sqrt(v_hat) + h.eps);
        }
    }
}

double lr_at(std::int64_t step, std::int64_t total_steps, double base_lr, std::int64_t warmup_steps) {
    step = std::clamp<std::int64_t>(step, 0, total_steps);
    if (step < warmup_steps) {
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    const std::int64_t span = total_steps - warmup_steps;
    if (span <= 0) return base_lr;
    const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(span);
    return std::max(0.0, base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

}  // namespace fmlab
