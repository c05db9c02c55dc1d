#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "transferbench/dataset.hpp"
#include "transferbench/estimators.hpp"
#include "transferbench/evaluation.hpp"

namespace transferbench {

struct TaskSpec {
    std::string name;
    std::filesystem::path labels;
    /// (candidate name, feature file) in the truth table's candidate order.
    std::vector<std::pair<std::string, std::filesystem::path>> candidates;
    /// Target-model features, required by dse/rsa.
    std::optional<std::filesystem::path> target_features;
};

struct BenchmarkConfig {
    std::vector<TaskSpec> tasks;
    std::vector<MethodConfig> methods;
    /// Sweep lists; empty means "each method's own default".
    std::vector<int> dims;
    std::vector<AffinityKind> affinities;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    /// Sample cap applied to graph-based methods (rsa, knn, msc, parc).
    Eigen::Index sample_cap = 10000;
    std::filesystem::path truth;
    std::filesystem::path output;
    int workers = 1;

    static BenchmarkConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    /// FNV-1a digest of the canonical config serialization.
    std::string digest() const;
};

/// Stable per-cell seed so results are independent of worker scheduling.
std::uint64_t derive_seed(std::uint64_t master_seed, std::string_view method,
                          std::string_view candidate, std::string_view task);

/// Runs the full method x dim x affinity x task x candidate x seed grid,
/// writes the report JSON atomically to config.output, and returns the
/// per-method best (dim, affinity) aggregation. Validates every referenced
/// file before estimating anything.
EvalReport run_benchmark(const BenchmarkConfig& config);

/// Single estimation for the CLI: loads the files, applies the sample cap
/// for graph-based methods, and runs estimate().
ScoreRecord score_once(MethodConfig config, const std::filesystem::path& features,
                       const std::filesystem::path& labels,
                       const std::optional<std::filesystem::path>& aux,
                       FeatureFormat format, Eigen::Index sample_cap = 10000,
                       const std::string& candidate_name = "");

/// Renders a stored report as a Table-2-shaped markdown table (method rows;
/// MRR, mean Spearman, mean estimation time columns).
std::string render_report_markdown(const nlohmann::json& report);

/// Writes via a temporary file plus rename so interrupted runs never leave
/// truncated output.
void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& doc);

nlohmann::json report_to_json(const EvalReport& report);

}  // namespace transferbench
