#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fmlab/config.hpp"
#include "fmlab/datasets.hpp"
#include "fmlab/sampler.hpp"
#include "fmlab/tensor.hpp"

namespace fmlab {

// Squared energy distance, V-statistic over all pairs, clamped at 0.
double energy_distance(const Tensor& a, const Tensor& b);

// Fraction of rows whose Bayes-optimal class under `spec` is `label`.
double adherence(const Tensor& samples, int label, const GmmSpec& spec);

struct GapPoint {
    std::int64_t step = 0;
    double gap = 0.0;
};

struct GapSummary {
    std::vector<GapPoint> series;
    // Over points in the last 25% of the step range.
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
};

// gap = val - train at each validation step, paired with the train point at
// the nearest step (the lower one on ties).
GapSummary generalization_gap(const std::vector<std::pair<std::int64_t, double>>& train_curve,
                              const std::vector<std::pair<std::int64_t, double>>& val_curve);

// Fresh draws from the data law of one class, shaped like generated samples
// (sequence classes are generated directly at the crop window length).
Tensor reference_samples(const DatasetConfig& data, int label, std::size_t n, Rng& rng);

struct EvalSpec {
    DatasetConfig dataset;
    std::size_t n_per_class = 1000;
    std::uint64_t seed = 7;
};

struct ClassEval {
    int label = 0;
    std::optional<double> adherence;  // absent for sequence data
    double energy_distance = 0.0;
    double baseline = 0.0;  // ED between two independent real draws
    double ratio = 0.0;
};

struct EvalReport {
    std::vector<ClassEval> classes;
    std::optional<double> mean_adherence;
    std::optional<double> min_adherence;
    double mean_energy_distance = 0.0;
    double mean_baseline = 0.0;
    double ratio = 0.0;      // mean ED / mean baseline
    double max_ratio = 0.0;  // worst class
    std::size_t n_per_class = 0;
};

inline constexpr int kEvalSchemaVersion = 1;

// Scores one sample set per class against the reference law.
EvalReport evaluate_samples(const std::map<int, Tensor>& samples, const EvalSpec& spec);

// Generates n_per_class samples for every class with `gen` (label and
// n_samples are overridden) and scores them.
EvalReport evaluate_model(const VelocityModel& model, const ModelParams& params, GenerationConfig gen,
                          const EvalSpec& spec);

nlohmann::json to_json(const EvalReport& r);

struct SweepRow {
    double cfg = 0.0;
    double adherence = 0.0;  // mean over classes (NaN without a GMM)
    double energy_distance = 0.0;
    std::size_t n = 0;
    std::uint64_t seed = 0;
};

// One evaluate_model per scale with the same seed for every scale.
std::vector<SweepRow> sweep_cfg(const VelocityModel& model, const ModelParams& params,
                                const std::vector<double>& scales, const GenerationConfig& gen, const EvalSpec& spec);

std::string sweep_csv(const std::vector<SweepRow>& rows);

// Shortest round-trip formatting used for every CSV cell.
std::string format_double(double v);

}  // namespace fmlab
