#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fmlab/config.hpp"
#include "fmlab/datasets.hpp"
#include "fmlab/flowmatch.hpp"
#include "fmlab/snapshots.hpp"

namespace fmlab {

// Training data, held-out rows and the fixed validation batch for a config.
struct DataBundle {
    LabeledSet train;
    LabeledSet val;
    std::unique_ptr<DatasetBatchSource> source;
    std::unique_ptr<ValidationSet> validation;
};

DataBundle build_data(const RunConfig& cfg);

// <root>/<run_id>-<UTC timestamp>, with a numeric suffix if that exists.
std::filesystem::path fresh_run_dir(const std::filesystem::path& root, const std::string& run_id);

inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kFinalCheckpoint = "final.fmc";
inline constexpr const char* kResolvedConfig = "config.resolved.json";

nlohmann::json to_json(const MetricsRecord& r);
MetricsRecord metrics_from_json(const nlohmann::json& j);
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& jsonl);

struct TrainOutcome {
    std::filesystem::path dir;
    std::filesystem::path final_checkpoint;
    std::vector<MetricsRecord> records;
    double seconds = 0.0;
};

// Trains into `dir` (created; must not already hold a run). Writes the
// resolved config, one metrics line per step, snapshots and final.fmc.
TrainOutcome run_training(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream* progress = nullptr);

// (step, val_loss) pairs of a metrics log.
std::vector<std::pair<std::int64_t, double>> val_curve(const std::vector<MetricsRecord>& records);
std::vector<std::pair<std::int64_t, double>> train_curve(const std::vector<MetricsRecord>& records);

// The run config stored in a checkpoint written by run_training.
RunConfig checkpoint_run_config(const Checkpoint& c);

struct EmaResult {
    std::filesystem::path path;
    std::int64_t from_step = 0;
    std::int64_t to_step = 0;
    std::vector<std::int64_t> steps;
    bool auto_fallback = false;
};

// Averages the run's snapshots over [from, to] and writes
// ema_<from>_<to>.fmc with step = to and extra.ema_window = [from, to].
EmaResult write_ema(const std::filesystem::path& run_dir, std::int64_t from_step, std::int64_t to_step);
// Same, with the window taken from detect_stable_window on the run's log.
EmaResult write_ema_auto(const std::filesystem::path& run_dir);

}  // namespace fmlab
