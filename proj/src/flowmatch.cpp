#include "fmlab/flowmatch.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fmlab/errors.hpp"

namespace fmlab {

double snr(double t) {
    if (!(t > 0.0) || t > 1.0) throw std::domain_error("snr: t=" + std::to_string(t) + " outside (0, 1]");
    const double r = (1.0 - t) / t;
    return r * r;
}

double minsnr_weight(double t, double gamma) {
    if (!(gamma > 0.0)) throw std::domain_error("minsnr_weight: gamma must be > 0");
    const double s = snr(t);
    if (s == 0.0) return 1.0;
    return std::min(1.0, gamma / s);
}

Interpolated interpolate(const Tensor& x0, const Tensor& eps, std::span<const double> t) {
    require_same_shape(x0, eps, "interpolate");
    if (x0.rank() != 2 || t.size() != x0.dim(0)) {
        throw ShapeError("interpolate: " + std::to_string(t.size()) + " times for data " + shape_str(x0.shape()));
    }
    Interpolated out{x0.zeros_like(), x0.zeros_like()};
    const std::size_t d = x0.dim(1);
    for (std::size_t b = 0; b < t.size(); ++b) {
        const double tb = t[b];
        for (std::size_t j = 0; j < d; ++j) {
            const double a = x0.at(b, j);
            const double e = eps.at(b, j);
            out.x_t.at(b, j) = (1.0 - tb) * a + tb * e;
            out.u_target.at(b, j) = e - a;
        }
    }
    return out;
}

LossStats per_sample_loss(const Tensor& v_pred, const Tensor& u_target, double clamp) {
    if (!(clamp > 0.0)) throw std::invalid_argument("per_sample_loss: clamp must be > 0");
    require_same_shape(v_pred, u_target, "per_sample_loss");
    LossStats stats;
    const std::size_t n = v_pred.rows();
    const std::size_t d = v_pred.cols();
    stats.per_sample_raw.resize(n);
    double sum = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
        double mse = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double r = v_pred[b * d + j] - u_target[b * d + j];
            mse += r * r;
        }
        mse /= static_cast<double>(d);
        if (mse > clamp) {
            ++stats.clamp_hits;
            mse = clamp;
        }
        stats.per_sample_raw[b] = mse;
        sum += mse;
    }
    stats.weighted_mean = n ? sum / static_cast<double>(n) : 0.0;
    return stats;
}

std::vector<int> apply_cfg_dropout(std::span<const int> labels, double p, int null_label, Rng& rng) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("apply_cfg_dropout: p must lie in [0, 1]");
    std::vector<int> out(labels.begin(), labels.end());
    for (auto& l : out) {
        if (rng.uniform() < p) l = null_label;
    }
    return out;
}

LossStats flow_matching_loss(const VelocityModel& model, const ModelParams& params, const FlowBatch& batch,
                             const LossSettings& settings, ModelParams* grads, double grad_scale,
                             std::size_t sample_offset) {
    const Interpolated path = interpolate(batch.x0, batch.eps, batch.t);
    std::unique_ptr<ForwardCache> cache;
    const Tensor v = model.forward(params, path.x_t, batch.t, batch.labels, ForwardOptions{Phase::training, false},
                                   grads ? &cache : nullptr);

    const std::size_t n = v.rows();
    const std::size_t d = v.cols();
    LossStats stats;
    stats.per_sample_raw.resize(n);
    stats.per_bin.reserve(n);
    Tensor grad_v = grads ? v.zeros_like() : Tensor();
    double weighted_sum = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
        double mse = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double r = v.at(b, j) - path.u_target.at(b, j);
            mse += r * r;
        }
        mse /= static_cast<double>(d);
        if (!std::isfinite(mse)) {
            throw NumericError("non-finite loss at sample " + std::to_string(sample_offset + b));
        }
        const bool clamped = mse > settings.clamp;
        if (clamped) {
            ++stats.clamp_hits;
            mse = settings.clamp;
        }
        const double w = settings.min_snr ? minsnr_weight(batch.t[b], settings.gamma) : 1.0;
        stats.per_sample_raw[b] = mse;
        stats.per_bin.emplace_back(bin_index(batch.t[b], settings.n_bins), mse);
        weighted_sum += w * mse;

        if (grads && !clamped) {
            const double k = grad_scale * w * 2.0 / static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) grad_v.at(b, j) = k * (v.at(b, j) - path.u_target.at(b, j));
        }
    }
    stats.weighted_mean = weighted_sum / static_cast<double>(n);
    if (grads) model.backward(params, *cache, grad_v, *grads);
    return stats;
}

void TrainingConfig::validate() const {
    if (steps < 1) throw ConfigError("training.steps must be >= 1");
    if (batch < 1 || accum < 1) throw ConfigError("training.batch and training.accum must be >= 1");
    if (warmup < 0 || warmup >= steps) throw ConfigError("training.warmup must lie in [0, steps)");
    if (!(clamp > 0.0)) throw ConfigError("training.clamp must be > 0");
    if (!(cfg_dropout >= 0.0 && cfg_dropout <= 1.0)) throw ConfigError("training.cfg_dropout must lie in [0, 1]");
    if (!(gamma > 0.0)) throw ConfigError("training.gamma must be > 0");
    if (!(adam.lr_base >= 0.0) || !(adam.weight_decay >= 0.0)) throw ConfigError("training.lr_base/weight_decay must be >= 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
        throw ConfigError("training.betas must lie in [0, 1)");
    }
    if (!(adam.eps > 0.0)) throw ConfigError("training.adam_eps must be > 0");
}

TrainStreams TrainStreams::from_seed(std::uint64_t seed) {
    const Rng root(seed);
    return TrainStreams{root.derive("data"), root.derive("dropout"), root.derive("time"), root.derive("noise")};
}

MetricsRecord training_step(const VelocityModel& model, TrainState& state, const BatchSource& source,
                            const TrainingConfig& config) {
    if (source.dim() != model.input_dim()) {
        throw ShapeError("training_step: batch source dim " + std::to_string(source.dim()) + " != model input_dim " +
                         std::to_string(model.input_dim()));
    }
    const auto& ts = state.sampler.settings;
    const bool adaptive_now = ts.adaptive && state.sampler.active();

    MetricsRecord rec;
    rec.step = state.step + 1;
    rec.lr = lr_at(rec.step, config.steps, config.adam.lr_base, config.warmup);
    rec.sampler_mode = adaptive_now ? "adaptive" : "fallback";
    rec.bin_entropy = bin_entropy(state.sampler);

    const std::size_t d = source.dim();
    const std::size_t total = config.batch * config.accum;
    const LossSettings loss_cfg = config.loss_settings(state.sampler.ema.size());
    ModelParams grads = state.params.zeros_like();
    std::vector<std::pair<double, double>> ema_updates;
    ema_updates.reserve(total);
    double weighted_sum = 0.0;

    for (std::size_t m = 0; m < config.accum; ++m) {
        std::vector<double> x0;
        std::vector<int> labels;
        x0.reserve(config.batch * d);
        source.draw(state.rng.data, config.batch, x0, labels);

        FlowBatch batch;
        batch.x0 = Tensor({config.batch, d}, std::move(x0));
        batch.labels = apply_cfg_dropout(labels, config.cfg_dropout, model.null_label(), state.rng.dropout);
        batch.t = ts.adaptive ? sample_adaptive(state.sampler, state.rng.time, config.batch)
                              : sample_logit_normal(state.rng.time, ts.fallback_mu, ts.fallback_sigma, config.batch);
        batch.eps = Tensor({config.batch, d});
        for (auto& e : batch.eps.values()) e = state.rng.noise.normal();

        const LossStats stats = flow_matching_loss(model, state.params, batch, loss_cfg, &grads,
                                                   1.0 / static_cast<double>(total), m * config.batch);
        weighted_sum += stats.weighted_mean * static_cast<double>(config.batch);
        rec.clamp_hits += stats.clamp_hits;
        for (std::size_t b = 0; b < config.batch; ++b) ema_updates.emplace_back(batch.t[b], stats.per_sample_raw[b]);
    }

    adamw_step(state.opt, state.params, grads, rec.lr);
    for (const auto& [t, raw] : ema_updates) update_bin_ema(state.sampler, t, raw);
    state.step += 1;
    rec.train_loss = weighted_sum / static_cast<double>(total);
    return rec;
}

namespace {

FlowBatch build_validation_batch(const LabeledSet& data, std::uint64_t seed, std::size_t seq_len,
                                 std::size_t channels, std::size_t window, double mu, double sigma) {
    const bool sequence = channels > 0;
    if (sequence && (seq_len * channels != data.x.cols() || window > seq_len || window == 0)) {
        throw ShapeError("validation sequence geometry does not match the data");
    }
    const std::size_t n = data.size();
    const std::size_t d = sequence ? window * channels : data.x.cols();
    FlowBatch batch{Tensor({n, d}), Tensor({n, d}), std::vector<double>(n), data.labels};
    const Rng root(seed);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = root.derive(static_cast<std::uint64_t>(i));
        auto row = data.x.row(i);
        if (sequence) {
            const auto offset = static_cast<std::size_t>(rng.below(seq_len - window + 1));
            row = row.subspan(offset * channels, d);
        }
        std::copy(row.begin(), row.end(), batch.x0.row(i).begin());
        batch.t[i] = sample_logit_normal(rng, mu, sigma, 1)[0];
        for (auto& e : batch.eps.row(i)) e = rng.normal();
    }
    return batch;
}

}  // namespace

ValidationSet::ValidationSet(const LabeledSet& data, std::uint64_t seed, double mu, double sigma)
    : batch_(build_validation_batch(data, seed, 0, 0, 0, mu, sigma)) {}

ValidationSet::ValidationSet(const LabeledSet& data, std::uint64_t seed, std::size_t seq_len, std::size_t channels,
                             std::size_t window, double mu, double sigma)
    : batch_(build_validation_batch(data, seed, seq_len, channels, window, mu, sigma)) {}

double ValidationSet::loss(const VelocityModel& model, const ModelParams& params, double clamp) const {
    LossSettings s;
    s.clamp = clamp;
    s.min_snr = false;
    return flow_matching_loss(model, params, batch_, s).weighted_mean;
}

}  // namespace fmlab
