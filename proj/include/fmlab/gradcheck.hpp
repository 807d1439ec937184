#pragma once

#include <cstdint>
#include <functional>

#include "fmlab/tensor.hpp"

namespace fmlab {

// Returns the scalar loss; when grads is non-null it must also fill the
// analytic gradient (same names and shapes as params).
using LossFn = std::function<double(const ModelParams& params, ModelParams* grads)>;

struct GradcheckOptions {
    int probes = 100;
    double eps = 1e-6;
    // Denominator floor: rel = |a - n| / max(|a|, |n|, floor). Keeps exactly-zero
    // and near-zero gradients from turning rounding noise into huge ratios.
    double floor = 1e-4;
    std::uint64_t seed = 0x5eed;
};

struct GradcheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

// Central differences on `probes` scalar entries drawn uniformly over all
// parameters; reports the worst relative error.
GradcheckReport fd_gradcheck_report(const ModelParams& params, const LossFn& loss_fn, const GradcheckOptions& opts);

double fd_gradcheck(const ModelParams& params, const LossFn& loss_fn, int probes, double eps);

}  // namespace fmlab
