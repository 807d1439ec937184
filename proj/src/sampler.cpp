#include "fmlab/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fmlab/errors.hpp"
#include "fmlab/rng.hpp"

namespace fmlab {

void GenerationConfig::validate() const {
    if (steps < 1) throw ConfigError("generation: steps must be >= 1");
    if (!(t_lo >= 0.0 && t_lo <= t_hi && t_hi <= 1.0)) {
        throw ConfigError("generation: interval must satisfy 0 <= t_lo <= t_hi <= 1");
    }
    if (!(cfg_scale >= 0.0) || !std::isfinite(cfg_scale)) throw ConfigError("generation: cfg scale must be >= 0");
    if (n_samples < 1) throw ConfigError("generation: n_samples must be >= 1");
    if (label < 0) throw ConfigError("generation: label must be >= 0");
}

bool in_guidance_interval(double t, double t_lo, double t_hi) { return t >= t_lo && t <= t_hi; }

Tensor cfg_combine(const Tensor& v_cond, const Tensor& v_uncond, double s, double t, double t_lo, double t_hi) {
    require_same_shape(v_cond, v_uncond, "cfg_combine");
    if (!in_guidance_interval(t, t_lo, t_hi)) return v_cond;
    Tensor out = v_cond;
    auto o = out.data();
    const auto c = v_cond.data();
    const auto u = v_uncond.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = u[i] + s * (c[i] - u[i]);
    return out;
}

Tensor initial_noise(std::size_t n, std::size_t dim, std::uint64_t seed, int label) {
    Rng rng = Rng(seed).derive("generate").derive(static_cast<std::uint64_t>(label));
    Tensor x({n, dim});
    for (auto& v : x.values()) v = rng.normal();
    return x;
}

GenerationResult euler_generate(const VelocityModel& model, const ModelParams& params, const GenerationConfig& cfg) {
    cfg.validate();
    if (cfg.label >= model.null_label()) {
        throw ConfigError("generation: label " + std::to_string(cfg.label) + " is not a class id");
    }
    GenerationResult res;
    Tensor x = initial_noise(cfg.n_samples, model.input_dim(), cfg.seed, cfg.label);
    const std::vector<int> cond(cfg.n_samples, cfg.label);
    const std::vector<int> uncond(cfg.n_samples, model.null_label());
    const double dt = 1.0 / static_cast<double>(cfg.steps);
    std::vector<double> t(cfg.n_samples);

    for (std::size_t k = cfg.steps; k >= 1; --k) {
        const double tk = static_cast<double>(k) / static_cast<double>(cfg.steps);
        std::fill(t.begin(), t.end(), tk);
        Tensor v = model.forward(params, x, t, cond, cfg.forward);
        ++res.cond_evals;
        if (cfg.cfg_scale != 1.0 && in_guidance_interval(tk, cfg.t_lo, cfg.t_hi)) {
            const Tensor vu = model.forward(params, x, t, uncond, cfg.forward);
            ++res.uncond_evals;
            v = cfg_combine(v, vu, cfg.cfg_scale, tk, cfg.t_lo, cfg.t_hi);
        }
        auto xs = x.data();
        const auto vs = v.data();
        for (std::size_t i = 0; i < xs.size(); ++i) xs[i] -= dt * vs[i];
        if (!x.all_finite()) {
            throw NumericError("non-finite sample state at step " + std::to_string(cfg.steps - k + 1) + " (t=" +
                               std::to_string(tk) + ")");
        }
    }
    res.samples = std::move(x);
    return res;
}

}  // namespace fmlab
