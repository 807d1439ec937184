#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fmlab/datasets.hpp"
#include "fmlab/optim.hpp"
#include "fmlab/rng.hpp"
#include "fmlab/tensor.hpp"
#include "fmlab/timesteps.hpp"
#include "fmlab/velocitynet.hpp"

namespace fmlab {

// Time convention: t = 0 is data, t = 1 is pure noise.
//   x_t = (1 - t) x0 + t eps,   u = eps - x0,   SNR(t) = ((1 - t) / t)^2

double snr(double t);

// min(SNR, gamma) / SNR, i.e. min(1, gamma / SNR); 1 at t = 1 where SNR = 0.
double minsnr_weight(double t, double gamma);

struct Interpolated {
    Tensor x_t;
    Tensor u_target;
};

Interpolated interpolate(const Tensor& x0, const Tensor& eps, std::span<const double> t);

struct LossStats {
    double weighted_mean = 0.0;
    std::vector<double> per_sample_raw;  // clamped MSE, before weighting
    std::int64_t clamp_hits = 0;
    std::vector<std::pair<std::size_t, double>> per_bin;  // (bin, clamped MSE)
};

// Per-sample MSE over dims, clamped at `clamp`. weighted_mean is the plain
// mean of the clamped values here; per_bin is left empty.
LossStats per_sample_loss(const Tensor& v_pred, const Tensor& u_target, double clamp);

std::vector<int> apply_cfg_dropout(std::span<const int> labels, double p, int null_label, Rng& rng);

struct FlowBatch {
    Tensor x0;
    Tensor eps;
    std::vector<double> t;
    std::vector<int> labels;
};

struct LossSettings {
    double clamp = 20.0;
    bool min_snr = true;
    double gamma = 5.0;
    std::size_t n_bins = 100;
};

// Forward pass plus loss mean_b(w(t_b) * clamped_mse_b). When grads is set,
// accumulates grad_scale * d(sum_b w_b * clamped_mse_b)/d(params) into it;
// pass grad_scale = 1 / (total samples in the update). Throws NumericError
// naming the first sample whose loss is non-finite.
LossStats flow_matching_loss(const VelocityModel& model, const ModelParams& params, const FlowBatch& batch,
                             const LossSettings& settings, ModelParams* grads = nullptr, double grad_scale = 0.0,
                             std::size_t sample_offset = 0);

struct TrainingConfig {
    std::int64_t steps = 1000;
    std::size_t batch = 16;
    std::size_t accum = 4;
    AdamWHyper adam;
    std::int64_t warmup = 200;
    double clamp = 20.0;
    double cfg_dropout = 0.15;
    double gamma = 5.0;
    bool min_snr = true;
    bool random_crop = true;

    void validate() const;
    LossSettings loss_settings(std::size_t n_bins) const { return {clamp, min_snr, gamma, n_bins}; }
};

// One independent substream per consumer so micro-batching never reorders draws.
struct TrainStreams {
    Rng data;
    Rng dropout;
    Rng time;
    Rng noise;

    static TrainStreams from_seed(std::uint64_t seed);
};

struct TrainState {
    ModelParams params;
    OptimizerState opt;
    TimestepSamplerState sampler;
    TrainStreams rng;
    std::int64_t step = 0;
};

struct MetricsRecord {
    std::int64_t step = 0;
    double train_loss = 0.0;
    std::optional<double> val_loss;
    double lr = 0.0;
    std::int64_t clamp_hits = 0;
    std::string sampler_mode;  // "fallback" | "adaptive"
    double bin_entropy = 0.0;
};

// Draw -> crop -> CFG dropout -> sample t -> interpolate -> forward ->
// weighted clamped loss -> backward, repeated over `accum` micro-batches,
// then one AdamW update at lr_at(step + 1) and bin-EMA updates with the
// clamped, unweighted per-sample MSE.
MetricsRecord training_step(const VelocityModel& model, TrainState& state, const BatchSource& source,
                            const TrainingConfig& config);

// Fixed validation batch: every sample gets its own seeded substream for the
// crop offset, t (logit-normal fallback law) and noise, so the loss is
// deterministic across evaluations and independent of training arms.
class ValidationSet {
public:
    ValidationSet(const LabeledSet& data, std::uint64_t seed, double mu = -0.4, double sigma = 1.0);
    ValidationSet(const LabeledSet& data, std::uint64_t seed, std::size_t seq_len, std::size_t channels,
                  std::size_t window, double mu = -0.4, double sigma = 1.0);

    // Unweighted mean of clamped per-sample MSE.
    double loss(const VelocityModel& model, const ModelParams& params, double clamp) const;

    const FlowBatch& batch() const { return batch_; }

private:
    FlowBatch batch_;
};

}  // namespace fmlab
