#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fmlab/errors.hpp"
#include "fmlab/optim.hpp"
#include "fmlab/tensor.hpp"
#include "fmlab/timesteps.hpp"
#include "fmlab/velocitynet.hpp"

namespace fmlab {

// .fmc layout, all integers little-endian:
//   "FMCKPT1\0"                       8 bytes
//   u32 tensor count
//   per tensor, lexicographic by name:
//     u16 name length, name bytes (UTF-8), u8 rank, rank x u64 dims,
//     numel x f64 payload
//   u32 metadata length, metadata (UTF-8 JSON)
//
// Tensor names are "param/<name>", "adam_m/<name>" and "adam_v/<name>".

struct Checkpoint {
    std::int64_t step = 0;
    ModelParams params;
    std::optional<OptimizerState> opt_state;
    std::optional<TimestepSamplerState> sampler_state;
    ArchConfig arch;
    std::string run_id;
    // Free-form provenance: resolved run config, RNG stream states,
    // ema_window, and so on.
    nlohmann::json extra = nlohmann::json::object();
};

enum class CheckpointErrorKind { io, bad_magic, truncated, duplicate_name, bad_metadata };

class CheckpointError : public IoError {
public:
    CheckpointError(CheckpointErrorKind kind, const std::string& what) : IoError(what), kind_(kind) {}
    CheckpointErrorKind kind() const { return kind_; }

private:
    CheckpointErrorKind kind_;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::string snapshot_filename(std::int64_t step);

class SnapshotStore {
public:
    // Scans an existing directory (creating it if needed) for ckpt_*.fmc.
    explicit SnapshotStore(std::filesystem::path dir);

    const std::filesystem::path& directory() const { return dir_; }
    const std::vector<std::pair<std::int64_t, std::string>>& index() const { return index_; }
    std::vector<std::int64_t> steps() const;

    // Writes the checkpoint under its step and keeps the index sorted.
    std::filesystem::path put(const Checkpoint& c);

private:
    std::filesystem::path dir_;
    std::vector<std::pair<std::int64_t, std::string>> index_;
};

// Persists iff c.step % every == 0. Returns the written path, if any.
std::optional<std::filesystem::path> record_snapshot(SnapshotStore& store, const Checkpoint& c, std::int64_t every);

struct AveragedParams {
    ModelParams params;
    std::vector<std::int64_t> steps;  // snapshots that went into the mean
    ArchConfig arch;
};

// Uniform mean of every snapshot with from_step <= step <= to_step.
AveragedParams posthoc_average(const SnapshotStore& store, std::int64_t from_step, std::int64_t to_step);

// Plain mean of parameter collections with identical names and shapes.
ModelParams average_params(const std::vector<ModelParams>& items);

struct StableWindow {
    std::int64_t from_step = 0;
    std::int64_t to_step = 0;
    bool fallback = false;  // true when the last-30% rule was used
};

// Longest suffix of the curve whose (max - min) / min <= rel_tol; it must
// span at least min_frac of the step range, otherwise the last 30% of steps.
StableWindow detect_stable_window(const std::vector<std::pair<std::int64_t, double>>& val_curve, double rel_tol,
                                  double min_frac);

}  // namespace fmlab
