#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "transferbench/affinity.hpp"
#include "transferbench/dataset.hpp"
#include "transferbench/numerics.hpp"

namespace transferbench {

/// The fourteen estimation methods. Every score is oriented so that larger
/// means more transferable.
enum class MethodId {
    dse,
    rsa,
    msc,
    knn,
    parc,
    gbc,
    logistic,
    hscore,
    reg_hscore,
    nleep,
    transrate,
    logme,
    sfda,
    pactran,
};

MethodId parse_method(std::string_view name);
std::string_view to_string(MethodId id);
const std::vector<MethodId>& all_methods();

/// dse and rsa compare a candidate against a fine-tuned target model and
/// need its feature matrix as a second input.
bool is_similarity_method(MethodId id);
/// rsa, knn, msc and parc touch every sample pair; the harness caps their
/// sample count.
bool is_graph_method(MethodId id);

struct MethodConfig {
    MethodId method = MethodId::hscore;
    /// PCA target dimension; one of {16, 32, 64, 128, 256, 512, 768} when
    /// set, otherwise the per-method default applies (clamped to D).
    std::optional<int> pca_dim;
    std::optional<AffinityKind> affinity;
    int k = 5;                 // kNN neighbours, one of {1, 3, 5, 7}
    double lambda = 1.0;       // PACTran temperature factor
    double sigma0_sq = 10.0;   // PACTran prior variance
    double epsilon = 1e-4;     // TransRate distortion
    int gmm_multiplier = 5;    // NLEEP components per class
    int cv_folds = 5;          // Logistic; cv_folds = N requests leave-one-out
    double shrink = 0.5;       // SFDA within-scatter regularization
    std::uint64_t seed = 0;

    void validate() const;
    int default_pca_dim() const;
    AffinityKind default_affinity() const;
    int effective_pca_dim() const { return pca_dim ? *pca_dim : default_pca_dim(); }
    AffinityKind effective_affinity() const { return affinity ? *affinity : default_affinity(); }
};

struct ScoreRecord {
    std::string method;
    std::string candidate;
    double score = 0.0;
    double estimate_seconds = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;
};

// --- model similarity ---

/// Mean sample affinity between the two models, negated:
/// -(1/N) sum_i distance(phi_i, psi_i, kind).
double dse_score(const FeatureMatrix& phi, const FeatureMatrix& psi, AffinityKind kind);

/// z-score both matrices per feature dimension, build each model's affinity
/// graph, and return the Spearman correlation of the strictly-lower
/// triangles.
double rsa_score(const FeatureMatrix& phi, const FeatureMatrix& psi, AffinityKind kind);

// --- class separability ---

/// Mean silhouette coefficient with the target classes as clusters.
/// Singleton-class samples contribute 0.
double msc_score(const Dataset& ds, AffinityKind kind);

/// Leave-one-out accuracy of a k-nearest-neighbour vote. Vote ties resolve
/// to the nearest tied class, then the lowest class id.
double knn_score(const Dataset& ds, int k, AffinityKind kind);

/// Spearman correlation between the feature affinity graph and the one-hot
/// label affinity graph (lower triangles).
double parc_score(const Dataset& ds, AffinityKind kind);

/// Negated sum over unordered class pairs of the Bhattacharyya coefficient
/// between per-class diagonal Gaussians.
double gbc_score(const Dataset& ds);

/// Stratified cv_folds-fold cross-validated accuracy of an L2-regularized
/// logistic head (l2 = 1). cv_folds = N gives leave-one-out.
double logistic_score(const Dataset& ds, int cv_folds, std::uint64_t seed);

// --- loss approximation ---

/// tr(pinv(cov(X)) * cov(class means)), both covariances with divisor N-1.
double h_score(const Dataset& ds);

/// h_score with the feature covariance replaced by its Ledoit-Wolf
/// shrinkage estimate (invertible, so no pseudo-inverse error).
double reg_h_score(const Dataset& ds);

/// Gaussian-mixture LEEP: (1/N) sum_i log sum_c P(y_i|c) P(c|x_i) with a
/// gmm_multiplier * C component mixture.
double nleep_score(const Dataset& ds, int gmm_multiplier, std::uint64_t seed);
/// Same score for an externally fitted mixture.
double nleep_score_with_gmm(const Dataset& ds, const GmmModel& gmm);

/// Coding-rate gain R(Z, eps) - sum_c (n_c/N) R(Z_c, eps) with
/// R(Z, eps) = 1/2 logdet(I + D/(N eps^2) Z^T Z) and per-class centering.
double transrate_score(const Dataset& ds, double epsilon);

struct LogmeDetails {
    double score = 0.0;
    bool converged = true;
};
/// Mean over classes of the per-sample log marginal evidence of a Bayesian
/// one-vs-all linear regression, maximized by the (alpha, beta) fixed-point
/// iteration.
LogmeDetails logme_details(const Dataset& ds);
double logme_score(const Dataset& ds);

struct SfdaDetails {
    double stage1 = 0.0;  // mean log posterior of the true class after FDA
    double stage2 = 0.0;  // same after the confidence-weighted mean mix
    double score = 0.0;   // mean of the stages
};
SfdaDetails sfda_details(const Dataset& ds, double shrink, std::uint64_t seed);
double sfda_score(const Dataset& ds, double shrink, std::uint64_t seed);

struct PactranDetails {
    double cross_entropy = 0.0;  // mean minimized cross-entropy
    double penalty = 0.0;        // ||w||^2 / (2 sigma0^2 lambda N)
    double complexity = 0.0;     // PAC-Gauss flatness term, diagonal Hessian
    double score = 0.0;          // -(cross_entropy + penalty + complexity)
    bool converged = true;
};
PactranDetails pactran_details(const Dataset& ds, double lambda, double sigma0_sq,
                               std::uint64_t seed);
double pactran_score(const Dataset& ds, double lambda, double sigma0_sq, std::uint64_t seed);

/// Dispatch: applies the per-method PCA default (clamped to D, skipped when
/// dim >= D), runs the method, and records the wall-clock estimation time.
/// aux must be given exactly for dse and rsa.
ScoreRecord estimate(const MethodConfig& config, const Dataset& ds,
                     const FeatureMatrix* aux = nullptr);

}  // namespace transferbench
