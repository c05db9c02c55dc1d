#include "transferbench/estimators.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "transferbench/evaluation.hpp"
#include "transferbench/random.hpp"

namespace transferbench {

namespace {

constexpr double kPi = 3.14159265358979323846;

const LabelVector& require_labels(const Dataset& ds, const char* method) {
    if (!ds.has_labels())
        throw std::invalid_argument(std::string(method) + " requires labels");
    return ds.labels();
}

void require_classes(const LabelVector& y, const char* method) {
    if (y.num_classes() < 2)
        throw std::invalid_argument(std::string(method) + " needs at least 2 classes");
}

/// Per-dimension z-score with population standard deviation; constant
/// columns carry no information and are zeroed.
Eigen::MatrixXd zscore_columns(const Eigen::MatrixXd& X) {
    Eigen::MatrixXd out = X.rowwise() - X.colwise().mean();
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        const double sd = std::sqrt(out.col(j).squaredNorm() / static_cast<double>(out.rows()));
        if (sd > 0.0)
            out.col(j) /= sd;
        else
            out.col(j).setZero();
    }
    return out;
}

double spearman_or_degenerate(const std::vector<double>& a, const std::vector<double>& b,
                              const char* method) {
    try {
        return spearman(a, b);
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(std::string(method) + ": degenerate affinity graph (" +
                                    e.what() + ")");
    }
}

/// Stratified fold assignment; cv_folds = N yields leave-one-out.
std::vector<std::vector<Eigen::Index>> stratified_folds(const LabelVector& y, int folds,
                                                        std::uint64_t seed) {
    const Eigen::Index n = y.size();
    std::vector<std::vector<Eigen::Index>> out(static_cast<std::size_t>(folds));
    if (folds == n) {
        for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = {i};
        return out;
    }
    Rng rng(seed);
    auto buckets = y.indices_by_class();
    for (auto& bucket : buckets) {
        rng.shuffle(bucket);
        for (std::size_t pos = 0; pos < bucket.size(); ++pos)
            out[pos % static_cast<std::size_t>(folds)].push_back(bucket[pos]);
    }
    for (auto& fold : out) std::sort(fold.begin(), fold.end());
    return out;
}

/// Per-class diagonal Gaussian MLE statistics.
struct ClassGaussians {
    Eigen::MatrixXd means;      // C x D
    Eigen::MatrixXd variances;  // C x D, floored
    std::vector<Eigen::Index> counts;
};

ClassGaussians fit_class_gaussians(const Eigen::MatrixXd& X, const LabelVector& y,
                                   double variance_floor) {
    const int c = y.num_classes();
    ClassGaussians out;
    out.means = Eigen::MatrixXd::Zero(c, X.cols());
    out.variances = Eigen::MatrixXd::Zero(c, X.cols());
    out.counts = y.class_counts();
    for (Eigen::Index i = 0; i < X.rows(); ++i) out.means.row(y[i]) += X.row(i);
    for (int k = 0; k < c; ++k) out.means.row(k) /= static_cast<double>(out.counts[k]);
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        out.variances.row(y[i]) += (X.row(i) - out.means.row(y[i])).array().square().matrix();
    for (int k = 0; k < c; ++k)
        out.variances.row(k) = (out.variances.row(k).array() /
                                static_cast<double>(out.counts[k]))
                                   .max(variance_floor)
                                   .matrix();
    return out;
}

/// Class-conditional mean-feature matrix: row i holds the mean feature of
/// the class of sample i.
Eigen::MatrixXd class_mean_rows(const Eigen::MatrixXd& X, const LabelVector& y) {
    const int c = y.num_classes();
    Eigen::MatrixXd means = Eigen::MatrixXd::Zero(c, X.cols());
    const auto counts = y.class_counts();
    for (Eigen::Index i = 0; i < X.rows(); ++i) means.row(y[i]) += X.row(i);
    for (int k = 0; k < c; ++k) means.row(k) /= static_cast<double>(counts[k]);
    Eigen::MatrixXd g(X.rows(), X.cols());
    for (Eigen::Index i = 0; i < X.rows(); ++i) g.row(i) = means.row(y[i]);
    return g;
}

void require_constant_free(const Eigen::MatrixXd& X, const char* method) {
    const double spread =
        (X.colwise().maxCoeff() - X.colwise().minCoeff()).maxCoeff();
    if (spread <= 0.0)
        throw std::invalid_argument(std::string(method) + ": all features are constant");
}

double coding_rate(const Eigen::MatrixXd& centered_rows, double epsilon) {
    const double n = static_cast<double>(centered_rows.rows());
    const double d = static_cast<double>(centered_rows.cols());
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(centered_rows.cols(), centered_rows.cols());
    s.selfadjointView<Eigen::Lower>().rankUpdate(centered_rows.transpose());
    s = Eigen::MatrixXd(s.selfadjointView<Eigen::Lower>());
    const Eigen::MatrixXd a =
        Eigen::MatrixXd::Identity(s.rows(), s.cols()) + (d / (n * epsilon * epsilon)) * s;
    return 0.5 * logdet_psd(a);
}

/// Shared-covariance Gaussian Bayes classifier in a low-dimensional space.
struct PooledGaussianBayes {
    Eigen::MatrixXd means;  // C x q
    Eigen::LLT<Eigen::MatrixXd> chol;
    Eigen::VectorXd log_priors;

    static PooledGaussianBayes fit(const Eigen::MatrixXd& Z, const LabelVector& y) {
        const int c = y.num_classes();
        const Eigen::Index n = Z.rows();
        const Eigen::Index q = Z.cols();
        PooledGaussianBayes model;
        model.means = Eigen::MatrixXd::Zero(c, q);
        const auto counts = y.class_counts();
        for (Eigen::Index i = 0; i < n; ++i) model.means.row(y[i]) += Z.row(i);
        for (int k = 0; k < c; ++k) model.means.row(k) /= static_cast<double>(counts[k]);

        Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(q, q);
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::RowVectorXd diff = Z.row(i) - model.means.row(y[i]);
            sigma.selfadjointView<Eigen::Lower>().rankUpdate(diff.transpose());
        }
        sigma = Eigen::MatrixXd(sigma.selfadjointView<Eigen::Lower>());
        sigma /= static_cast<double>(n);
        // Tiny diagonal jitter keeps the posterior defined when the mix
        // stage collapses classes onto their means.
        const double jitter = 1e-12 * sigma.trace() / static_cast<double>(q) + 1e-300;
        sigma.diagonal().array() += jitter;

        model.chol.compute(sigma);
        if (model.chol.info() != Eigen::Success)
            throw std::runtime_error("sfda_score: degenerate pooled covariance");
        model.log_priors = Eigen::VectorXd(c);
        for (int k = 0; k < c; ++k)
            model.log_priors(k) = std::log(static_cast<double>(counts[k]) / static_cast<double>(n));
        return model;
    }

    /// Mean over samples of log P(true class | z), via log-softmax of the
    /// per-class Gaussian logits. Also reports each sample's true-class
    /// posterior for the mixing stage.
    double mean_true_log_posterior(const Eigen::MatrixXd& Z, const LabelVector& y,
                                   Eigen::VectorXd* true_posterior) const {
        const Eigen::Index n = Z.rows();
        const int c = static_cast<int>(means.rows());
        if (true_posterior) true_posterior->resize(n);
        double total = 0.0;
        Eigen::VectorXd logits(c);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (int k = 0; k < c; ++k) {
                const Eigen::VectorXd diff = (Z.row(i) - means.row(k)).transpose();
                logits(k) = log_priors(k) - 0.5 * diff.dot(chol.solve(diff));
            }
            const double mx = logits.maxCoeff();
            double lse = 0.0;
            for (int k = 0; k < c; ++k) lse += std::exp(logits(k) - mx);
            lse = mx + std::log(lse);
            const double log_post = logits(y[i]) - lse;
            total += log_post;
            if (true_posterior) (*true_posterior)(i) = std::exp(log_post);
        }
        return total / static_cast<double>(n);
    }
};

}  // namespace

MethodId parse_method(std::string_view name) {
    for (MethodId id : all_methods())
        if (name == to_string(id)) return id;
    throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

std::string_view to_string(MethodId id) {
    switch (id) {
        case MethodId::dse: return "dse";
        case MethodId::rsa: return "rsa";
        case MethodId::msc: return "msc";
        case MethodId::knn: return "knn";
        case MethodId::parc: return "parc";
        case MethodId::gbc: return "gbc";
        case MethodId::logistic: return "logistic";
        case MethodId::hscore: return "hscore";
        case MethodId::reg_hscore: return "reg_hscore";
        case MethodId::nleep: return "nleep";
        case MethodId::transrate: return "transrate";
        case MethodId::logme: return "logme";
        case MethodId::sfda: return "sfda";
        case MethodId::pactran: return "pactran";
    }
    return "?";
}

const std::vector<MethodId>& all_methods() {
    static const std::vector<MethodId> ids = {
        MethodId::dse,    MethodId::rsa,        MethodId::msc,   MethodId::knn,
        MethodId::parc,   MethodId::gbc,        MethodId::logistic, MethodId::hscore,
        MethodId::reg_hscore, MethodId::nleep,  MethodId::transrate, MethodId::logme,
        MethodId::sfda,   MethodId::pactran,
    };
    return ids;
}

bool is_similarity_method(MethodId id) { return id == MethodId::dse || id == MethodId::rsa; }

bool is_graph_method(MethodId id) {
    return id == MethodId::rsa || id == MethodId::knn || id == MethodId::msc ||
           id == MethodId::parc;
}

void MethodConfig::validate() const {
    if (pca_dim) {
        static const int allowed[] = {16, 32, 64, 128, 256, 512, 768};
        if (std::find(std::begin(allowed), std::end(allowed), *pca_dim) == std::end(allowed))
            throw std::invalid_argument("pca_dim must be one of {16, 32, 64, 128, 256, 512, 768}");
    }
    if (k != 1 && k != 3 && k != 5 && k != 7)
        throw std::invalid_argument("k must be one of {1, 3, 5, 7}");
    if (epsilon <= 0.0) throw std::invalid_argument("epsilon must be positive");
    if (gmm_multiplier < 1) throw std::invalid_argument("gmm_multiplier must be >= 1");
    if (cv_folds < 2) throw std::invalid_argument("cv_folds must be >= 2");
    if (shrink < 0.0 || shrink > 1.0) throw std::invalid_argument("shrink must be in [0, 1]");
}

int MethodConfig::default_pca_dim() const {
    switch (method) {
        case MethodId::hscore:
        case MethodId::reg_hscore:
        case MethodId::dse: return 768;
        case MethodId::rsa:
        case MethodId::logme:
        case MethodId::sfda:
        case MethodId::parc: return 512;
        case MethodId::msc: return 256;
        case MethodId::knn:
        case MethodId::gbc:
        case MethodId::logistic:
        case MethodId::nleep:
        case MethodId::transrate:
        case MethodId::pactran: return 64;
    }
    return 768;
}

AffinityKind MethodConfig::default_affinity() const {
    switch (method) {
        case MethodId::dse: return AffinityKind::euclidean;
        case MethodId::msc: return AffinityKind::cosine;
        case MethodId::knn:
        case MethodId::rsa:
        case MethodId::parc: return AffinityKind::correlation;
        default: return AffinityKind::euclidean;
    }
}

double dse_score(const FeatureMatrix& phi, const FeatureMatrix& psi, AffinityKind kind) {
    if (phi.rows() != psi.rows())
        throw std::invalid_argument("dse_score: row counts differ (" + std::to_string(phi.rows()) +
                                    " vs " + std::to_string(psi.rows()) + ")");
    if (phi.cols() != psi.cols())
        throw std::invalid_argument("dse_score: feature dimensions differ (" +
                                    std::to_string(phi.cols()) + " vs " +
                                    std::to_string(psi.cols()) + ")");
    double total = 0.0;
    for (Eigen::Index i = 0; i < phi.rows(); ++i)
        total += distance(phi.values().row(i).transpose(), psi.values().row(i).transpose(), kind);
    return -total / static_cast<double>(phi.rows());
}

double rsa_score(const FeatureMatrix& phi, const FeatureMatrix& psi, AffinityKind kind) {
    if (phi.rows() != psi.rows()) throw std::invalid_argument("rsa_score: row counts differ");
    if (phi.rows() < 3) throw std::invalid_argument("rsa_score needs at least 3 samples");
    const AffinityGraph g_phi = pairwise_graph(FeatureMatrix(zscore_columns(phi.values())), kind);
    const AffinityGraph g_psi = pairwise_graph(FeatureMatrix(zscore_columns(psi.values())), kind);
    return spearman_or_degenerate(g_phi.lower_triangle(), g_psi.lower_triangle(), "rsa_score");
}

double msc_score(const Dataset& ds, AffinityKind kind) {
    const LabelVector& y = require_labels(ds, "msc_score");
    require_classes(y, "msc_score");
    const AffinityGraph graph = pairwise_graph(ds.features(), kind);
    const auto counts = y.class_counts();
    const int c = y.num_classes();
    const Eigen::Index n = ds.size();

    double total = 0.0;
    Eigen::VectorXd class_sums(c);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (counts[y[i]] < 2) continue;  // singleton clusters score 0
        class_sums.setZero();
        for (Eigen::Index j = 0; j < n; ++j) class_sums(y[j]) += graph.dist()(i, j);
        const double a = class_sums(y[i]) / static_cast<double>(counts[y[i]] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int k = 0; k < c; ++k) {
            if (k == y[i]) continue;
            b = std::min(b, class_sums(k) / static_cast<double>(counts[k]));
        }
        const double denom = std::max(a, b);
        total += denom > 0.0 ? (b - a) / denom : 0.0;
    }
    return total / static_cast<double>(n);
}

double knn_score(const Dataset& ds, int k, AffinityKind kind) {
    const LabelVector& y = require_labels(ds, "knn_score");
    const Eigen::Index n = ds.size();
    if (n <= k)
        throw std::invalid_argument("knn_score: need more than k = " + std::to_string(k) +
                                    " samples");
    const int c = y.num_classes();
    const Eigen::MatrixXd rep = affinity_rows(ds.features().values(), kind);

    Eigen::Index correct = 0;
    const Eigen::Index block = 256;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::vector<std::pair<double, Eigen::Index>> nearest;
    std::vector<Eigen::Index> votes(static_cast<std::size_t>(c));
    for (Eigen::Index start = 0; start < n; start += block) {
        const Eigen::Index rows = std::min(block, n - start);
        const Eigen::MatrixXd dist = cross_distances(rep.middleRows(start, rows), rep, kind);
        for (Eigen::Index r = 0; r < rows; ++r) {
            const Eigen::Index i = start + r;
            std::iota(order.begin(), order.end(), 0);
            order.erase(order.begin() + i);
            const auto closer = [&](Eigen::Index a, Eigen::Index b) {
                if (dist(r, a) != dist(r, b)) return dist(r, a) < dist(r, b);
                return a < b;
            };
            std::nth_element(order.begin(), order.begin() + (k - 1), order.end(), closer);
            nearest.clear();
            for (int j = 0; j < k; ++j) nearest.emplace_back(dist(r, order[j]), order[j]);
            std::sort(nearest.begin(), nearest.end());

            std::fill(votes.begin(), votes.end(), 0);
            for (const auto& [d, j] : nearest) ++votes[y[j]];
            const Eigen::Index top = *std::max_element(votes.begin(), votes.end());
            // Vote ties resolve to the tied class seen nearest, then to the
            // lowest class id among equally near tied classes.
            int winner = -1;
            double winner_dist = std::numeric_limits<double>::infinity();
            for (const auto& [d, j] : nearest) {
                const int cls = y[j];
                if (votes[cls] != top) continue;
                if (d < winner_dist || (d == winner_dist && cls < winner)) {
                    winner = cls;
                    winner_dist = d;
                }
                if (d > winner_dist) break;
            }
            if (winner == y[i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

double parc_score(const Dataset& ds, AffinityKind kind) {
    const LabelVector& y = require_labels(ds, "parc_score");
    require_classes(y, "parc_score");
    if (ds.size() < 3) throw std::invalid_argument("parc_score needs at least 3 samples");
    const AffinityGraph features = pairwise_graph(ds.features(), kind);
    const AffinityGraph labels = label_graph(y, kind);
    return spearman_or_degenerate(features.lower_triangle(), labels.lower_triangle(),
                                  "parc_score");
}

double gbc_score(const Dataset& ds) {
    const LabelVector& y = require_labels(ds, "gbc_score");
    require_classes(y, "gbc_score");
    for (int k = 0; k < y.num_classes(); ++k)
        if (y.class_counts()[k] < 2)
            throw std::invalid_argument("gbc_score: class " + std::to_string(k) +
                                        " has fewer than 2 samples");
    const ClassGaussians g = fit_class_gaussians(ds.features().values(), y, 1e-12);
    const int c = y.num_classes();
    double score = 0.0;
    for (int i = 0; i < c; ++i) {
        for (int j = i + 1; j < c; ++j) {
            double db = 0.0;
            for (Eigen::Index d = 0; d < g.means.cols(); ++d) {
                const double v1 = g.variances(i, d);
                const double v2 = g.variances(j, d);
                const double dmu = g.means(i, d) - g.means(j, d);
                db += 0.25 * dmu * dmu / (v1 + v2) +
                      0.5 * std::log(0.5 * (v1 + v2) / std::sqrt(v1 * v2));
            }
            score -= std::exp(-db);
        }
    }
    return score;
}

double logistic_score(const Dataset& ds, int cv_folds, std::uint64_t seed) {
    const LabelVector& y = require_labels(ds, "logistic_score");
    require_classes(y, "logistic_score");
    const Eigen::Index n = ds.size();
    if (cv_folds < 2) throw std::invalid_argument("logistic_score: cv_folds must be >= 2");
    if (cv_folds > n) throw std::invalid_argument("logistic_score: more folds than samples");
    const Eigen::Index min_class =
        *std::min_element(y.class_counts().begin(), y.class_counts().end());
    if (cv_folds == n) {
        if (min_class < 2)
            throw std::invalid_argument(
                "logistic_score: leave-one-out needs every class size >= 2");
    } else if (min_class < cv_folds) {
        throw std::invalid_argument("logistic_score: smallest class (" +
                                    std::to_string(min_class) + ") is below cv_folds");
    }

    const Eigen::MatrixXd& X = ds.features().values();
    const auto folds = stratified_folds(y, cv_folds, seed);
    Eigen::Index correct = 0;
    std::vector<char> held(static_cast<std::size_t>(n));
    for (const auto& fold : folds) {
        if (fold.empty()) continue;
        std::fill(held.begin(), held.end(), 0);
        for (Eigen::Index i : fold) held[static_cast<std::size_t>(i)] = 1;
        std::vector<Eigen::Index> train_idx;
        std::vector<int> train_labels;
        train_idx.reserve(static_cast<std::size_t>(n) - fold.size());
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!held[static_cast<std::size_t>(i)]) {
                train_idx.push_back(i);
                train_labels.push_back(y[i]);
            }
        }
        const LinearModel model =
            fit_logistic(take_rows(X, train_idx),
                         LabelVector(std::move(train_labels), y.num_classes()), 1.0);
        const std::vector<int> pred = model.predict(take_rows(X, fold));
        for (std::size_t p = 0; p < fold.size(); ++p)
            if (pred[p] == y[fold[p]]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

double h_score(const Dataset& ds) {
    const LabelVector& y = require_labels(ds, "h_score");
    require_classes(y, "h_score");
    const Eigen::MatrixXd& X = ds.features().values();
    require_constant_free(X, "h_score");
    const Eigen::MatrixXd cov_f = covariance(X);
    const Eigen::MatrixXd cov_b = covariance(class_mean_rows(X, y));
    // tr(pinv(cov_f) cov_b) as an elementwise sum; both factors are symmetric.
    return (pseudo_inverse(cov_f).array() * cov_b.array()).sum();
}

double reg_h_score(const Dataset& ds) {
    const LabelVector& y = require_labels(ds, "reg_h_score");
    require_classes(y, "reg_h_score");
    const Eigen::MatrixXd& X = ds.features().values();
    require_constant_free(X, "reg_h_score");
    const ShrinkageCovariance lw = shrinkage_covariance(X);
    if (!(lw.tau > 0.0))
        throw std::invalid_argument("reg_h_score: degenerate (constant) features");
    const Eigen::MatrixXd cov_b = covariance(class_mean_rows(X, y));
    Eigen::LLT<Eigen::MatrixXd> llt(lw.matrix);
    if (llt.info() == Eigen::Success) return llt.solve(cov_b).trace();
    return (pseudo_inverse(lw.matrix).array() * cov_b.array()).sum();
}

double nleep_score_with_gmm(const Dataset& ds, const GmmModel& gmm) {
    const LabelVector& y = require_labels(ds, "nleep_score");
    require_classes(y, "nleep_score");
    const Eigen::MatrixXd resp = gmm.responsibilities(ds.features().values());
    const Eigen::Index n = resp.rows();
    const Eigen::Index k = resp.cols();
    const int c = y.num_classes();

    // P(y | component) from soft counts.
    Eigen::MatrixXd p_y_given_c = Eigen::MatrixXd::Zero(c, k);
    for (Eigen::Index i = 0; i < n; ++i) p_y_given_c.row(y[i]) += resp.row(i);
    for (Eigen::Index j = 0; j < k; ++j) {
        const double mass = p_y_given_c.col(j).sum();
        if (mass > 0.0)
            p_y_given_c.col(j) /= mass;
        else
            p_y_given_c.col(j).setConstant(1.0 / static_cast<double>(c));
    }

    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double p = resp.row(i).dot(p_y_given_c.row(y[i]));
        total += std::log(std::max(p, 1e-300));
    }
    return total / static_cast<double>(n);
}

double nleep_score(const Dataset& ds, int gmm_multiplier, std::uint64_t seed) {
    const LabelVector& y = require_labels(ds, "nleep_score");
    require_classes(y, "nleep_score");
    const int k = gmm_multiplier * y.num_classes();
    if (ds.size() < k)
        throw std::invalid_argument("nleep_score: " + std::to_string(ds.size()) +
                                    " samples cannot support " + std::to_string(k) +
                                    " mixture components");
    const GmmModel gmm = fit_gmm(ds.features().values(), k, seed);
    return nleep_score_with_gmm(ds, gmm);
}

double transrate_score(const Dataset& ds, double epsilon) {
    const LabelVector& y = require_labels(ds, "transrate_score");
    require_classes(y, "transrate_score");
    if (epsilon <= 0.0) throw std::invalid_argument("transrate_score: epsilon must be positive");
    const Eigen::MatrixXd& X = ds.features().values();
    const Eigen::Index n = X.rows();
    const Eigen::MatrixXd z = X.rowwise() - X.colwise().mean();
    double score = coding_rate(z, epsilon);
    const auto buckets = y.indices_by_class();
    for (const auto& bucket : buckets) {
        Eigen::MatrixXd zc = take_rows(z, bucket);
        zc.rowwise() -= zc.colwise().mean().eval();
        score -= (static_cast<double>(bucket.size()) / static_cast<double>(n)) *
                 coding_rate(zc, epsilon);
    }
    return score;
}

LogmeDetails logme_details(const Dataset& ds) {
    const LabelVector& y = require_labels(ds, "logme_score");
    require_classes(y, "logme_score");
    const Eigen::MatrixXd& F = ds.features().values();
    const Eigen::Index n = F.rows();
    const Eigen::Index d = F.cols();

    Eigen::BDCSVD<Eigen::MatrixXd> svd(F, Eigen::ComputeThinU);
    const Eigen::VectorXd s2 = svd.singularValues().array().square();
    const Eigen::VectorXd s = svd.singularValues();
    const Eigen::Index r = s.size();

    LogmeDetails out;
    double total = 0.0;
    for (int cls = 0; cls < y.num_classes(); ++cls) {
        Eigen::VectorXd target = Eigen::VectorXd::Zero(n);
        for (Eigen::Index i = 0; i < n; ++i)
            if (y[i] == cls) target(i) = 1.0;
        const Eigen::VectorXd z = svd.matrixU().transpose() * target;
        const double outside = std::max(0.0, target.squaredNorm() - z.squaredNorm());

        double alpha = 1.0;
        double beta = 1.0;
        double log_evidence = 0.0;
        double prev = std::numeric_limits<double>::quiet_NaN();
        bool converged = false;
        for (int iter = 0; iter < 100; ++iter) {
            const Eigen::ArrayXd denom = alpha + beta * s2.array();
            const Eigen::ArrayXd m = beta * s.array() * z.array() / denom;
            const double m_sq = m.square().sum();
            const double residual =
                (s.array() * m - z.array()).square().sum() + outside;
            const double gamma = (beta * s2.array() / denom).sum();

            log_evidence = 0.5 * (static_cast<double>(d) * std::log(alpha) +
                                  static_cast<double>(n) * std::log(beta) -
                                  static_cast<double>(n) * std::log(2.0 * kLogmePi)) -
                           0.5 * (beta * residual + alpha * m_sq) -
                           0.5 * (denom.log().sum() +
                                  static_cast<double>(d - r) * std::log(alpha));

            if (iter > 0 && std::abs(log_evidence - prev) <
                                1e-3 * std::max(std::abs(prev), 1e-12)) {
                converged = true;
                break;
            }
            prev = log_evidence;
            alpha = gamma / std::max(m_sq, 1e-300);
            beta = std::max(static_cast<double>(n) - gamma, 1e-12) /
                   std::max(residual, 1e-300);
        }
        out.converged = out.converged && converged;
        total += log_evidence / static_cast<double>(n);
    }
    out.score = total / static_cast<double>(y.num_classes());
    return out;
}

double logme_score(const Dataset& ds) { return logme_details(ds).score; }

SfdaDetails sfda_details(const Dataset& ds, double shrink, std::uint64_t seed) {
    (void)seed;  // the two-stage schedule is deterministic
    const LabelVector& y = require_labels(ds, "sfda_score");
    require_classes(y, "sfda_score");
    for (int k = 0; k < y.num_classes(); ++k)
        if (y.class_counts()[k] < 2)
            throw std::invalid_argument("sfda_score: class " + std::to_string(k) +
                                        " has fewer than 2 samples");

    const FdaProjection proj = fda_project(ds.features(), y, shrink);
    const Eigen::MatrixXd& z = proj.projected.values();

    SfdaDetails out;
    const PooledGaussianBayes stage1 = PooledGaussianBayes::fit(z, y);
    Eigen::VectorXd confidence;
    out.stage1 = stage1.mean_true_log_posterior(z, y, &confidence);

    // Self-challenging: pull each sample toward its class mean by its own
    // stage-1 confidence, then refit and rescore on the mixed features.
    Eigen::MatrixXd mixed(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double w = confidence(i);
        mixed.row(i) = w * stage1.means.row(y[i]) + (1.0 - w) * z.row(i);
    }
    const PooledGaussianBayes stage2 = PooledGaussianBayes::fit(mixed, y);
    out.stage2 = stage2.mean_true_log_posterior(mixed, y, nullptr);
    out.score = 0.5 * (out.stage1 + out.stage2);
    return out;
}

double sfda_score(const Dataset& ds, double shrink, std::uint64_t seed) {
    return sfda_details(ds, shrink, seed).score;
}

PactranDetails pactran_details(const Dataset& ds, double lambda, double sigma0_sq,
                               std::uint64_t seed) {
    (void)seed;  // zero init and full-batch optimization are deterministic
    const LabelVector& y = require_labels(ds, "pactran_score");
    require_classes(y, "pactran_score");
    if (lambda <= 0.0) throw std::invalid_argument("pactran_score: lambda must be positive");
    if (sigma0_sq <= 0.0) throw std::invalid_argument("pactran_score: sigma0_sq must be positive");

    const Eigen::MatrixXd& X = ds.features().values();
    const double n = static_cast<double>(X.rows());
    const double lda = lambda * n;  // effective PAC-Bayes temperature

    // argmin sum_i CE_i + ||w||^2 / (2 sigma0^2 lambda); the bias belongs to
    // the posterior, so it is penalized too.
    const LinearModel model =
        minimize_softmax(X, y, 1.0 / (sigma0_sq * lambda), /*penalize_bias=*/true, 500, 1e-8);

    PactranDetails out;
    out.converged = model.converged;
    out.cross_entropy =
        softmax_objective(model.weights, X, y, 0.0, /*penalize_bias=*/false) / n;
    out.penalty = model.weights.squaredNorm() / (2.0 * sigma0_sq * lda);

    // Diagonal Hessian of the mean cross-entropy at the optimum; the
    // per-coordinate Gaussian posterior variance optimizing the bound turns
    // the flatness term into log1p form.
    Eigen::MatrixXd xb(X.rows(), X.cols() + 1);
    xb.leftCols(X.cols()) = X;
    xb.col(X.cols()).setOnes();
    Eigen::MatrixXd probs = xb * model.weights.transpose();
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const Eigen::VectorXd row = probs.row(i).transpose();
        const double mx = row.maxCoeff();
        double lse = 0.0;
        for (Eigen::Index k = 0; k < row.size(); ++k) lse += std::exp(row(k) - mx);
        lse = mx + std::log(lse);
        probs.row(i) = (row.array() - lse).exp().transpose();
    }
    const Eigen::MatrixXd hess_diag =
        ((probs.array() * (1.0 - probs.array())).matrix().transpose() *
         xb.array().square().matrix()) /
        n;
    out.complexity =
        (1.0 + lda * sigma0_sq * hess_diag.array()).log().sum() / (2.0 * lda);
    out.score = -(out.cross_entropy + out.penalty + out.complexity);
    return out;
}

double pactran_score(const Dataset& ds, double lambda, double sigma0_sq, std::uint64_t seed) {
    return pactran_details(ds, lambda, sigma0_sq, seed).score;
}

namespace {

/// PCA to dim when dim < D, otherwise the identity; appends a clamp warning.
FeatureMatrix reduce_if_needed(const FeatureMatrix& X, int requested, int applied,
                               std::vector<std::string>* warnings) {
    if (warnings && applied < requested)
        warnings->push_back("pca_dim " + std::to_string(requested) +
                            " exceeds feature dimension " + std::to_string(X.cols()) +
                            "; clamped to " + std::to_string(applied));
    if (applied >= X.cols()) return X;
    return pca_fit_transform(X, applied).second;
}

}  // namespace

ScoreRecord estimate(const MethodConfig& config, const Dataset& ds, const FeatureMatrix* aux) {
    config.validate();
    if (is_similarity_method(config.method) && aux == nullptr)
        throw std::invalid_argument(std::string(to_string(config.method)) +
                                    " requires target-model features");
    if (!is_similarity_method(config.method) && aux != nullptr)
        throw std::invalid_argument(std::string(to_string(config.method)) +
                                    " does not take target-model features");

    ScoreRecord record;
    record.method = std::string(to_string(config.method));
    record.seed = config.seed;

    const auto start = std::chrono::steady_clock::now();
    const int dim = config.effective_pca_dim();
    const AffinityKind kind = config.effective_affinity();

    double score = 0.0;
    switch (config.method) {
        case MethodId::dse: {
            // Both spaces must end up at one width for sample-wise affinities.
            const int applied = static_cast<int>(std::min<Eigen::Index>(
                dim, std::min(ds.features().cols(), aux->cols())));
            const FeatureMatrix phi =
                reduce_if_needed(ds.features(), dim, applied, &record.warnings);
            const FeatureMatrix psi = reduce_if_needed(*aux, dim, applied, &record.warnings);
            score = dse_score(phi, psi, kind);
            break;
        }
        case MethodId::rsa: {
            const int d_phi = static_cast<int>(std::min<Eigen::Index>(dim, ds.features().cols()));
            const int d_psi = static_cast<int>(std::min<Eigen::Index>(dim, aux->cols()));
            const FeatureMatrix phi =
                reduce_if_needed(ds.features(), dim, d_phi, &record.warnings);
            const FeatureMatrix psi = reduce_if_needed(*aux, dim, d_psi, &record.warnings);
            score = rsa_score(phi, psi, kind);
            break;
        }
        default: {
            const int applied = static_cast<int>(std::min<Eigen::Index>(dim, ds.features().cols()));
            const FeatureMatrix reduced =
                reduce_if_needed(ds.features(), dim, applied, &record.warnings);
            const Dataset working = ds.has_labels() ? Dataset(reduced, ds.labels())
                                                    : Dataset(reduced);
            switch (config.method) {
                case MethodId::msc: score = msc_score(working, kind); break;
                case MethodId::knn: score = knn_score(working, config.k, kind); break;
                case MethodId::parc: score = parc_score(working, kind); break;
                case MethodId::gbc: score = gbc_score(working); break;
                case MethodId::logistic:
                    score = logistic_score(working, config.cv_folds, config.seed);
                    break;
                case MethodId::hscore: score = h_score(working); break;
                case MethodId::reg_hscore: score = reg_h_score(working); break;
                case MethodId::nleep:
                    score = nleep_score(working, config.gmm_multiplier, config.seed);
                    break;
                case MethodId::transrate:
                    score = transrate_score(working, config.epsilon);
                    break;
                case MethodId::logme: {
                    const LogmeDetails details = logme_details(working);
                    if (!details.converged)
                        record.warnings.push_back("logme evidence iteration did not converge");
                    score = details.score;
                    break;
                }
                case MethodId::sfda:
                    score = sfda_score(working, config.shrink, config.seed);
                    break;
                case MethodId::pactran: {
                    const PactranDetails details =
                        pactran_details(working, config.lambda, config.sigma0_sq, config.seed);
                    if (!details.converged)
                        record.warnings.push_back("pactran optimization did not converge");
                    score = details.score;
                    break;
                }
                default: throw std::logic_error("unhandled method");
            }
        }
    }
    record.score = score;
    record.estimate_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(record.score))
        throw std::runtime_error(record.method + ": non-finite score");
    return record;
}

}  // namespace transferbench
