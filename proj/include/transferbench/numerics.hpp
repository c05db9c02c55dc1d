#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <utility>
#include <vector>

#include "transferbench/dataset.hpp"

namespace transferbench {

/// Center-only PCA. Component rows are orthonormal and carry a fixed sign
/// convention (the entry of largest magnitude is positive) so that repeated
/// fits are bit-identical.
struct PcaModel {
    Eigen::VectorXd mean;                // D
    Eigen::MatrixXd components;          // d x D, orthonormal rows
    Eigen::VectorXd explained_variance;  // d, nonincreasing, divisor N-1

    Eigen::MatrixXd transform(const Eigen::MatrixXd& X) const;
    Eigen::MatrixXd inverse_transform(const Eigen::MatrixXd& Z) const;
};

/// Fits PCA and returns the projected features. Requires 1 <= dim <= min(N, D).
std::pair<PcaModel, FeatureMatrix> pca_fit_transform(const FeatureMatrix& X, Eigen::Index dim);

/// Unbiased sample covariance (divisor N-1), exactly symmetrized. N >= 2.
Eigen::MatrixXd covariance(const Eigen::MatrixXd& X);

/// Ledoit-Wolf analytic shrinkage: (1-gamma) * S + gamma * tau * I with
/// tau = mean diagonal of S and gamma from the closed-form intensity
/// estimate (S here uses the divisor-N convention of the original
/// estimator). gamma is clamped to [0, 1]; constant input yields gamma = 1
/// with tau = 0, which callers treat as degenerate.
struct ShrinkageCovariance {
    Eigen::MatrixXd matrix;
    double intensity = 0.0;  // gamma
    double tau = 0.0;        // mean diagonal of S
};
ShrinkageCovariance shrinkage_covariance(const Eigen::MatrixXd& X);

/// Moore-Penrose pseudo-inverse via SVD. Singular values below
/// tol * max(sigma) are treated as zero.
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& M, double tol = 1e-10);

/// log det of a symmetric PSD matrix: sum of log eigenvalues above a 1e-12
/// floor. Eigenvalues in [-1e-6, 0) are clipped to zero; anything below
/// -1e-6 raises (matrix is not PSD).
double logdet_psd(const Eigen::MatrixXd& M);

/// Diagonal-covariance Gaussian mixture fitted by EM from a k-means++
/// initialization. Per-dimension variances are floored at 1e-6 so duplicate
/// samples cannot produce singular components.
struct GmmModel {
    Eigen::VectorXd weights;    // K, nonnegative, sums to 1
    Eigen::MatrixXd means;      // K x D
    Eigen::MatrixXd variances;  // K x D, entries >= variance floor
    bool converged = true;
    /// Mean per-sample log-likelihood after each EM iteration.
    std::vector<double> log_likelihood_history;

    Eigen::Index components() const { return weights.size(); }
    /// Posterior P(component | x) for every row of X, N x K.
    Eigen::MatrixXd responsibilities(const Eigen::MatrixXd& X) const;
    double mean_log_likelihood(const Eigen::MatrixXd& X) const;
};

constexpr double kGmmVarianceFloor = 1e-6;

GmmModel fit_gmm(const Eigen::MatrixXd& X, int num_components, std::uint64_t seed,
                 int max_iter = 200, double tol = 1e-4);

/// Multinomial softmax head with bias folded into the last weight column.
struct LinearModel {
    Eigen::MatrixXd weights;  // C x (D+1)
    bool converged = true;
    double objective = 0.0;
    int iterations = 0;

    Eigen::MatrixXd logits(const Eigen::MatrixXd& X) const;  // N x C
    std::vector<int> predict(const Eigen::MatrixXd& X) const;
};

/// Objective: sum_i cross-entropy + (l2 / 2) * ||w||^2, with the bias column
/// excluded from the penalty unless penalize_bias is set.
double softmax_objective(const Eigen::MatrixXd& w, const Eigen::MatrixXd& X,
                         const LabelVector& y, double l2, bool penalize_bias);
Eigen::MatrixXd softmax_gradient(const Eigen::MatrixXd& w, const Eigen::MatrixXd& X,
                                 const LabelVector& y, double l2, bool penalize_bias);

/// L-BFGS minimization of the softmax objective from a zero start. Stops at
/// gradient max-norm <= tol; running out of iterations flags
/// converged = false rather than raising.
LinearModel minimize_softmax(const Eigen::MatrixXd& X, const LabelVector& y, double l2,
                             bool penalize_bias, int max_iter, double tol);

/// L2-regularized multinomial logistic regression (bias unpenalized).
LinearModel fit_logistic(const Eigen::MatrixXd& X, const LabelVector& y, double l2,
                         int max_iter = 200, double tol = 1e-8);

/// Fisher discriminant directions: top C-1 eigenvectors of the pencil
/// (S_b, (1-shrink) * S_w + shrink * tau * I). Directions are unit-norm with
/// the PCA sign convention.
struct FdaProjection {
    Eigen::MatrixXd directions;  // (C-1) x D
    FeatureMatrix projected;     // N x (C-1)
};
FdaProjection fda_project(const FeatureMatrix& X, const LabelVector& y, double shrink);

}  // namespace transferbench
