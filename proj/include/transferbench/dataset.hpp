#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace transferbench {

/// N x D matrix of sample features. Stored as 64-bit floats internally even
/// though the binary file format carries 32-bit values; widening on load
/// keeps the covariance chains downstream at full precision.
class FeatureMatrix {
public:
    FeatureMatrix() = default;
    /// Validates N >= 1, D >= 1 and that every entry is finite.
    explicit FeatureMatrix(Eigen::MatrixXd values);

    Eigen::Index rows() const { return values_.rows(); }
    Eigen::Index cols() const { return values_.cols(); }
    const Eigen::MatrixXd& values() const { return values_; }

private:
    Eigen::MatrixXd values_;
};

/// N integer class labels over a dense id range [0, C). Ids must be dense:
/// a gap (say labels {0, 2} with no 1) is rejected rather than remapped.
class LabelVector {
public:
    LabelVector() = default;
    /// C is inferred as 1 + max label.
    explicit LabelVector(std::vector<int> labels);
    /// Explicit C; every id in [0, C) must still occur.
    LabelVector(std::vector<int> labels, int num_classes);

    Eigen::Index size() const { return static_cast<Eigen::Index>(labels_.size()); }
    int num_classes() const { return num_classes_; }
    const std::vector<int>& labels() const { return labels_; }
    int operator[](Eigen::Index i) const { return labels_[static_cast<std::size_t>(i)]; }

    std::vector<Eigen::Index> class_counts() const;
    std::vector<std::vector<Eigen::Index>> indices_by_class() const;

private:
    void validate() const;

    std::vector<int> labels_;
    int num_classes_ = 0;
};

/// Feature matrix plus (optionally) labels. Similarity-based estimators use
/// label-free datasets; everything else requires labels.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(FeatureMatrix features) : features_(std::move(features)) {}
    Dataset(FeatureMatrix features, LabelVector labels);

    const FeatureMatrix& features() const { return features_; }
    bool has_labels() const { return labels_.has_value(); }
    const LabelVector& labels() const;
    Eigen::Index size() const { return features_.rows(); }

private:
    FeatureMatrix features_;
    std::optional<LabelVector> labels_;
};

/// True downstream performance of every candidate on every task, as a
/// metric value in [0, 100]. All tasks share one candidate list in one
/// fixed order.
class TruePerformanceTable {
public:
    TruePerformanceTable() = default;
    TruePerformanceTable(std::vector<std::string> candidates,
                         std::vector<std::pair<std::string, std::vector<double>>> tasks);

    static TruePerformanceTable load(const std::filesystem::path& path);
    void store(const std::filesystem::path& path) const;

    const std::vector<std::string>& candidates() const { return candidates_; }
    std::vector<std::string> task_names() const;
    bool has_task(const std::string& name) const;
    const std::vector<double>& performance(const std::string& task) const;

private:
    std::vector<std::string> candidates_;
    std::vector<std::pair<std::string, std::vector<double>>> tasks_;
};

enum class FeatureFormat { binary, csv };

/// Reads an FMAT1 binary file or a headerless CSV of decimal floats.
/// Errors carry the offending row/column where one exists.
FeatureMatrix load_features(const std::filesystem::path& path, FeatureFormat format);

/// Writes the FMAT1 binary format (little-endian, 32-bit floats, row-major).
void store_features(const std::filesystem::path& path, const FeatureMatrix& features);

/// Reads one base-10 integer per line; C = 1 + max label.
LabelVector load_labels(const std::filesystem::path& path);

/// Indices of a stratified subsample of size min(cap, N), without
/// replacement. Per-class allocations follow the largest-remainder rule and
/// never drop a class; the result is sorted so row order is preserved.
std::vector<Eigen::Index> stratified_sample_indices(const LabelVector& labels,
                                                    Eigen::Index cap,
                                                    std::uint64_t seed);

/// Returns ds unchanged when N <= cap, otherwise a stratified subsample
/// whose per-class counts deviate from exact proportionality by at most 1.
Dataset subsample_stratified(const Dataset& ds, Eigen::Index cap, std::uint64_t seed);

/// Row selection helper shared by subsampling and cross-validation.
Eigen::MatrixXd take_rows(const Eigen::MatrixXd& X, const std::vector<Eigen::Index>& idx);

}  // namespace transferbench
