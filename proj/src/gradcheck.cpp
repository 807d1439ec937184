#include "fmlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "fmlab/rng.hpp"

namespace fmlab {

GradcheckReport fd_gradcheck_report(const ModelParams& params, const LossFn& loss_fn, const GradcheckOptions& opts) {
    GradcheckReport report;
    const std::size_t total = param_count(params);
    if (total == 0 || opts.probes <= 0) return report;

    ModelParams analytic = params.zeros_like();
    loss_fn(params, &analytic);

    std::vector<std::pair<std::string, std::size_t>> flat;
    flat.reserve(total);
    for (const auto& [name, t] : params) {
        for (std::size_t i = 0; i < t.numel(); ++i) flat.emplace_back(name, i);
    }

    Rng rng(opts.seed);
    ModelParams probe = params;
    for (int k = 0; k < opts.probes; ++k) {
        const auto& [name, idx] = flat[rng.below(total)];
        double& slot = probe.at(name)[idx];
        const double orig = slot;
        slot = orig + opts.eps;
        const double up = loss_fn(probe, nullptr);
        slot = orig - opts.eps;
        const double down = loss_fn(probe, nullptr);
        slot = orig;

        const double numeric = (up - down) / (2.0 * opts.eps);
        const double a = analytic.at(name)[idx];
        const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
        const double rel = std::abs(a - numeric) / denom;
        if (k == 0 || rel > report.max_rel_error) {
            report = GradcheckReport{rel, name, idx, a, numeric};
        }
    }
    return report;
}

double fd_gradcheck(const ModelParams& params, const LossFn& loss_fn, int probes, double eps) {
    GradcheckOptions opts;
    opts.probes = probes;
    opts.eps = eps;
    return fd_gradcheck_report(params, loss_fn, opts).max_rel_error;
}

}  // namespace fmlab
