#pragma once

#include <Eigen/Core>

#include <string>
#include <string_view>
#include <vector>

#include "transferbench/dataset.hpp"

namespace transferbench {

enum class AffinityKind { euclidean, cosine, correlation };

/// Accepts exactly "euclidean", "cosine", "correlation".
AffinityKind parse_affinity(std::string_view name);
std::string_view to_string(AffinityKind kind);

/// euclidean: ||a-b||_2
/// cosine: 1 - a.b / (||a|| ||b||), undefined for zero vectors
/// correlation: 1 - Pearson(a, b), undefined for constant vectors
/// Rounding noise can push cosine/correlation a hair below zero; tiny
/// negatives are clamped to 0.
double distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b, AffinityKind kind);

/// Dense symmetric matrix of pairwise sample distances, zero diagonal.
class AffinityGraph {
public:
    /// Validates symmetry (1e-10), an exactly zero diagonal and entries
    /// >= -1e-12.
    explicit AffinityGraph(Eigen::MatrixXd dist);

    Eigen::Index size() const { return dist_.rows(); }
    const Eigen::MatrixXd& dist() const { return dist_; }

    /// Strictly-lower-triangular entries in row-major order.
    std::vector<double> lower_triangle() const;

private:
    struct Unchecked {};
    AffinityGraph(Eigen::MatrixXd dist, Unchecked) : dist_(std::move(dist)) {}

    friend AffinityGraph pairwise_graph(const FeatureMatrix&, AffinityKind);
    friend AffinityGraph label_graph(const LabelVector&, AffinityKind);

    Eigen::MatrixXd dist_;
};

/// dist[i][j] = distance(x_i, x_j, kind). N >= 2.
AffinityGraph pairwise_graph(const FeatureMatrix& X, AffinityKind kind);

/// Pairwise distances between the one-hot encodings of the labels. C >= 2.
AffinityGraph label_graph(const LabelVector& y, AffinityKind kind);

/// Preprocessed rows for block-wise distance computation (unit rows for
/// cosine, centered unit rows for correlation, raw rows for euclidean).
/// Validates the per-kind row preconditions.
Eigen::MatrixXd affinity_rows(const Eigen::MatrixXd& X, AffinityKind kind);

/// Distances between every row of a and every row of b, both already
/// preprocessed by affinity_rows with the same kind.
Eigen::MatrixXd cross_distances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                AffinityKind kind);

}  // namespace transferbench
