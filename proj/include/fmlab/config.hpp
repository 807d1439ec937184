#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmlab/datasets.hpp"
#include "fmlab/flowmatch.hpp"
#include "fmlab/timesteps.hpp"
#include "fmlab/velocitynet.hpp"

namespace fmlab {

using json = nlohmann::json;

enum class DatasetKind { gmm, sequence };

struct DatasetConfig {
    DatasetKind kind = DatasetKind::gmm;
    GmmSpec gmm = GmmSpec::four_corners();
    SequenceSpec sequence = SequenceSpec::default_spec();
    std::size_t n_per_class = 2000;
    double val_frac = 0.02;

    std::size_t n_classes() const { return kind == DatasetKind::gmm ? gmm.n_classes() : sequence.n_classes(); }
    // Width of one training sample after cropping.
    std::size_t sample_dim() const {
        return kind == DatasetKind::gmm ? gmm.dim : sequence.window * sequence.channels;
    }
};

struct SnapshotConfig {
    std::int64_t every = 1000;
    double rel_tol = 0.01;
    double min_frac = 0.1;
};

struct EvalConfig {
    std::int64_t every = 100;    // validation-loss cadence in steps
    std::size_t n_per_class = 1000;  // samples per class for generation metrics
    std::uint64_t seed = 7;
};

struct GenerationDefaults {
    std::size_t steps = 100;
    double t_lo = 0.1;
    double t_hi = 0.9;
    double cfg_scale = 3.0;
    std::vector<double> submit_scales{7.0, 8.0};
};

struct RunConfig {
    std::string run_id = "run";
    std::string comment;
    std::uint64_t seed = 1;
    DatasetConfig dataset;
    ArchConfig arch;
    TrainingConfig training;
    TimestepSettings timesteps;
    SnapshotConfig snapshots;
    EvalConfig eval;
    GenerationDefaults generation;

    void validate() const;
};

// JSON conversion. Readers are strict: unknown keys and wrong types raise
// ConfigError naming the offending path; absent keys keep their defaults.
json to_json(const RunConfig& c);
RunConfig run_config_from_json(const json& j);

json to_json(const ArchConfig& a);
ArchConfig arch_from_json(const json& j);

json to_json(const TimestepSettings& s);
TimestepSettings timestep_settings_from_json(const json& j);

json to_json(const GmmSpec& s);
GmmSpec gmm_from_json(const json& j);

RunConfig load_run_config(const std::filesystem::path& path);

// Applies "a.b.c=value" (value parsed as JSON, falling back to a string).
void apply_override(json& config, const std::string& assignment);

// Keys (dotted paths) whose values differ between two JSON documents.
std::vector<std::string> json_diff_paths(const json& a, const json& b);

}  // namespace fmlab
