#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "transferbench/dataset.hpp"
#include "transferbench/estimators.hpp"

namespace transferbench {

/// Spearman rank correlation with average ranks for ties. Inputs must have
/// equal length >= 3 and must not be constant.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

/// 1/r where r is the rank (1-based, descending, ties averaged) that the
/// scores assign to the candidate with the highest true performance. A tie
/// at the true maximum is rejected as ambiguous.
double reciprocal_rank(const std::vector<double>& scores, const std::vector<double>& truth);

struct TaskResult {
    std::string task;
    double reciprocal_rank = 0.0;
    double spearman = 0.0;
    double mean_estimate_seconds = 0.0;
};

struct MethodSummary {
    std::string method;
    std::vector<TaskResult> per_task;
    double mrr = 0.0;
    double mean_spearman = 0.0;
    double mean_estimate_seconds = 0.0;
};

struct EvalReport {
    std::vector<MethodSummary> methods;
    std::vector<std::uint64_t> seeds;
    std::string config_digest;
};

/// One estimation outcome tagged with its task.
struct RunRecord {
    std::string task;
    ScoreRecord record;
};

/// Averages scores over seeds per (method, task, candidate), then computes
/// reciprocal rank and Spearman per (method, task) on the mean scores and
/// the per-method aggregates. Candidate sets must match the truth table;
/// a missing cell is an error naming the gap.
EvalReport aggregate(const std::vector<RunRecord>& records, const TruePerformanceTable& truth);

}  // namespace transferbench
