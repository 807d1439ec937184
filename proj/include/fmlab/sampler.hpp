#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fmlab/tensor.hpp"
#include "fmlab/velocitynet.hpp"

namespace fmlab {

struct GenerationConfig {
    std::size_t steps = 100;
    double cfg_scale = 1.0;
    double t_lo = 0.1;
    double t_hi = 0.9;
    std::size_t n_samples = 1;
    int label = 0;
    std::uint64_t seed = 0;
    // Forwarded to the model; inference phase by default.
    ForwardOptions forward{Phase::inference, false};

    void validate() const;
};

bool in_guidance_interval(double t, double t_lo, double t_hi);

// v_u + s (v_c - v_u) inside [t_lo, t_hi], v_c outside.
Tensor cfg_combine(const Tensor& v_cond, const Tensor& v_uncond, double s, double t, double t_lo, double t_hi);

struct GenerationResult {
    Tensor samples;
    std::size_t cond_evals = 0;
    std::size_t uncond_evals = 0;
};

// Starting noise for (seed, label): the same for every scale and step count.
Tensor initial_noise(std::size_t n, std::size_t dim, std::uint64_t seed, int label);

// Euler integration of dx/dt = v from t = 1 down to t = 0 on a uniform grid.
GenerationResult euler_generate(const VelocityModel& model, const ModelParams& params, const GenerationConfig& cfg);

}  // namespace fmlab
