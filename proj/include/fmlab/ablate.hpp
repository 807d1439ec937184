#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace fmlab {

enum class Matrix { training, inference, conditioning };

Matrix parse_matrix(std::string_view name);
std::string_view matrix_name(Matrix m);

// One arm = baseline config plus a set of dotted-path overrides.
struct ArmSpec {
    std::string name;
    std::vector<std::pair<std::string, nlohmann::json>> overrides;
};

// Baseline first, then dropout 0.05 / 0.30, Min-SNR off, adaptive off, crop off.
std::vector<ArmSpec> training_arms();

struct AblationOptions {
    std::filesystem::path out_dir;
    // Inference matrix: evaluate this finished run instead of training one.
    std::optional<std::filesystem::path> run_dir;
    std::ostream* progress = nullptr;
};

struct AblationResult {
    nlohmann::json report;
    std::string markdown;
    std::filesystem::path report_path;
    std::filesystem::path markdown_path;
};

// Runs every arm of the matrix from `base_config` (a RunConfig document)
// and writes report.json and report.md into options.out_dir.
AblationResult run_ablation(const nlohmann::json& base_config, Matrix matrix, const AblationOptions& options);

}  // namespace fmlab
