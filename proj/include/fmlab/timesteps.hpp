#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fmlab/rng.hpp"

namespace fmlab {

// Every sampled or trained timestep lives in [kTimeEps, 1 - kTimeEps].
inline constexpr double kTimeEps = 1e-5;

struct TimestepSettings {
    bool adaptive = true;
    int n_bins = 100;
    double beta = 0.99;
    double temperature = 1.0;
    double uniform_floor = 0.1;
    std::int64_t min_count = 10;
    double fallback_mu = -0.4;
    double fallback_sigma = 1.0;
    // Share of fallback draws taken uniformly on (0, 1) so that tail bins
    // reach min_count; 0 makes the fallback a pure logit-normal.
    double fallback_mix = 0.1;

    void validate() const;
};

struct TimestepSamplerState {
    TimestepSettings settings;
    std::vector<double> ema;
    std::vector<std::int64_t> counts;

    static TimestepSamplerState fresh(const TimestepSettings& settings);

    // True once every bin has seen min_count updates.
    bool active() const;
};

std::vector<double> sample_logit_normal(Rng& rng, double mu, double sigma, std::size_t n);

std::size_t bin_index(double t, std::size_t n_bins);

void update_bin_ema(TimestepSamplerState& state, double t, double raw_loss);

// Active-mode bin law: (1 - u) * softmax(ema / tau) + u / n_bins.
std::vector<double> adaptive_bin_probabilities(const TimestepSamplerState& state);

// Bin masses of whatever law sample_adaptive currently draws from.
std::vector<double> current_bin_probabilities(const TimestepSamplerState& state);

// Natural-log entropy of current_bin_probabilities.
double bin_entropy(const TimestepSamplerState& state);

std::vector<double> sample_adaptive(const TimestepSamplerState& state, Rng& rng, std::size_t n);

}  // namespace fmlab
