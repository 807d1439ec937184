#include "fmlab/timesteps.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "fmlab/errors.hpp"

namespace fmlab {

namespace {

double clamp_time(double t) { return std::clamp(t, kTimeEps, 1.0 - kTimeEps); }

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double logit_normal_draw(Rng& rng, double mu, double sigma) {
    return clamp_time(sigmoid(rng.normal(mu, sigma)));
}

}  // namespace

void TimestepSettings::validate() const {
    if (n_bins < 1) throw ConfigError("timesteps.n_bins must be >= 1");
    if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("timesteps.beta must lie in (0, 1)");
    if (!(temperature > 0.0)) throw ConfigError("timesteps.temperature must be > 0");
    if (!(uniform_floor >= 0.0 && uniform_floor <= 1.0)) throw ConfigError("timesteps.uniform_floor must lie in [0, 1]");
    if (min_count < 0) throw ConfigError("timesteps.min_count must be >= 0");
    if (!(fallback_sigma > 0.0)) throw ConfigError("timesteps.fallback_sigma must be > 0");
    if (!(fallback_mix >= 0.0 && fallback_mix <= 1.0)) throw ConfigError("timesteps.fallback_mix must lie in [0, 1]");
}

TimestepSamplerState TimestepSamplerState::fresh(const TimestepSettings& settings) {
    settings.validate();
    const auto n = static_cast<std::size_t>(settings.n_bins);
    return TimestepSamplerState{settings, std::vector<double>(n, 0.0), std::vector<std::int64_t>(n, 0)};
}

bool TimestepSamplerState::active() const {
    return *std::min_element(counts.begin(), counts.end()) >= settings.min_count;
}

std::vector<double> sample_logit_normal(Rng& rng, double mu, double sigma, std::size_t n) {
    if (!(sigma > 0.0)) throw std::invalid_argument("sample_logit_normal: sigma must be > 0");
    std::vector<double> t(n);
    for (auto& v : t) v = logit_normal_draw(rng, mu, sigma);
    return t;
}

std::size_t bin_index(double t, std::size_t n_bins) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::out_of_range("bin_index: t=" + std::to_string(t) + " outside [0, 1]");
    const auto i = static_cast<std::size_t>(std::floor(t * static_cast<double>(n_bins)));
    return std::min(i, n_bins - 1);
}

void update_bin_ema(TimestepSamplerState& state, double t, double raw_loss) {
    if (!(raw_loss >= 0.0) || !std::isfinite(raw_loss)) {
        throw std::invalid_argument("update_bin_ema: raw_loss must be finite and >= 0");
    }
    const std::size_t i = bin_index(t, state.ema.size());
    if (state.counts[i] == 0) {
        state.ema[i] = raw_loss;
    } else {
        const double beta = state.settings.beta;
        state.ema[i] = beta * state.ema[i] + (1.0 - beta) * raw_loss;
    }
    state.counts[i] += 1;
}

std::vector<double> adaptive_bin_probabilities(const TimestepSamplerState& state) {
    const auto& s = state.settings;
    const std::size_t n = state.ema.size();
    const double tau = s.temperature;
    const double top = *std::max_element(state.ema.begin(), state.ema.end());
    std::vector<double> p(n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = std::exp((state.ema[i] - top) / tau);
        z += p[i];
    }
    const double u = s.uniform_floor;
    for (auto& v : p) v = (1.0 - u) * (v / z) + u / static_cast<double>(n);
    return p;
}

std::vector<double> current_bin_probabilities(const TimestepSamplerState& state) {
    if (state.settings.adaptive && state.active()) return adaptive_bin_probabilities(state);
    const auto& s = state.settings;
    const std::size_t n = state.ema.size();
    std::vector<double> p(n);
    double prev = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double cdf = 1.0;
        if (i + 1 < n) {
            const double edge = static_cast<double>(i + 1) / static_cast<double>(n);
            cdf = normal_cdf((std::log(edge / (1.0 - edge)) - s.fallback_mu) / s.fallback_sigma);
        }
        const double mix = s.adaptive ? s.fallback_mix : 0.0;
        p[i] = (1.0 - mix) * (cdf - prev) + mix / static_cast<double>(n);
        prev = cdf;
    }
    return p;
}

double bin_entropy(const TimestepSamplerState& state) {
    double h = 0.0;
    for (double p : current_bin_probabilities(state)) {
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

std::vector<double> sample_adaptive(const TimestepSamplerState& state, Rng& rng, std::size_t n) {
    if (n == 0) throw std::invalid_argument("sample_adaptive: n must be >= 1");
    const auto& s = state.settings;
    std::vector<double> t(n);
    if (!state.active()) {
        for (auto& v : t) {
            if (s.fallback_mix > 0.0 && rng.uniform() < s.fallback_mix) {
                v = clamp_time(rng.uniform_open());
            } else {
                v = logit_normal_draw(rng, s.fallback_mu, s.fallback_sigma);
            }
        }
        return t;
    }

    const auto p = adaptive_bin_probabilities(state);
    std::vector<double> cdf(p.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        cdf[i] = acc;
    }
    const double nb = static_cast<double>(p.size());
    for (auto& v : t) {
        const double u = rng.uniform() * acc;
        auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        const auto bin = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(p.size()) - 1));
        v = clamp_time((static_cast<double>(bin) + rng.uniform()) / nb);
    }
    return t;
}

}  // namespace fmlab
