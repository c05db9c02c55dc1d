#include "transferbench/numerics.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

#include "transferbench/random.hpp"

namespace transferbench {

namespace {

constexpr double kPi = 3.14159265358979323846;

/// Flips rows of M so each row's largest-magnitude entry is positive.
/// Ties resolve to the first index of maximal magnitude.
void fix_signs(Eigen::MatrixXd& rows, Eigen::MatrixXd* paired_cols = nullptr) {
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        Eigen::Index arg = 0;
        double best = -1.0;
        for (Eigen::Index j = 0; j < rows.cols(); ++j) {
            const double mag = std::abs(rows(r, j));
            if (mag > best) {
                best = mag;
                arg = j;
            }
        }
        if (rows(r, arg) < 0.0) {
            rows.row(r) = -rows.row(r);
            if (paired_cols) paired_cols->col(r) = -paired_cols->col(r);
        }
    }
}

Eigen::MatrixXd centered(const Eigen::MatrixXd& X) {
    return X.rowwise() - X.colwise().mean();
}

double logsumexp_row(const Eigen::VectorXd& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;  // all -inf
    double s = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) s += std::exp(v(i) - m);
    return m + std::log(s);
}

}  // namespace

Eigen::MatrixXd PcaModel::transform(const Eigen::MatrixXd& X) const {
    return (X.rowwise() - mean.transpose()) * components.transpose();
}

Eigen::MatrixXd PcaModel::inverse_transform(const Eigen::MatrixXd& Z) const {
    return (Z * components).rowwise() + mean.transpose();
}

std::pair<PcaModel, FeatureMatrix> pca_fit_transform(const FeatureMatrix& X, Eigen::Index dim) {
    const Eigen::MatrixXd& values = X.values();
    const Eigen::Index n = values.rows();
    const Eigen::Index d = values.cols();
    if (dim < 1 || dim > std::min(n, d))
        throw std::invalid_argument("pca dimension " + std::to_string(dim) +
                                    " outside [1, min(N, D)] = [1, " +
                                    std::to_string(std::min(n, d)) + "]");

    PcaModel model;
    model.mean = values.colwise().mean();
    const Eigen::MatrixXd Xc = values.rowwise() - model.mean.transpose();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(Xc, Eigen::ComputeThinU | Eigen::ComputeThinV);

    model.components = svd.matrixV().leftCols(dim).transpose();
    const Eigen::VectorXd sigma = svd.singularValues().head(dim);
    model.explained_variance =
        sigma.array().square() / static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
    fix_signs(model.components);
    return {model, FeatureMatrix(Xc * model.components.transpose())};
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& X) {
    if (X.rows() < 2) throw std::invalid_argument("covariance needs at least 2 samples");
    const Eigen::MatrixXd Xc = centered(X);
    Eigen::MatrixXd S = (Xc.transpose() * Xc) / static_cast<double>(X.rows() - 1);
    S = ((S + S.transpose()) * 0.5).eval();
    return S;
}

ShrinkageCovariance shrinkage_covariance(const Eigen::MatrixXd& X) {
    if (X.rows() < 2) throw std::invalid_argument("shrinkage covariance needs at least 2 samples");
    const double n = static_cast<double>(X.rows());
    const double p = static_cast<double>(X.cols());
    const Eigen::MatrixXd Xc = centered(X);
    Eigen::MatrixXd S = (Xc.transpose() * Xc) / n;
    S = ((S + S.transpose()) * 0.5).eval();

    ShrinkageCovariance out;
    out.tau = S.trace() / p;
    const double d2 = (S - out.tau * Eigen::MatrixXd::Identity(S.rows(), S.cols())).squaredNorm() / p;
    if (d2 <= 0.0) {
        out.intensity = 1.0;
        out.matrix = out.tau * Eigen::MatrixXd::Identity(S.rows(), S.cols());
        return out;
    }
    // sum_k ||x_k x_k^T - S||_F^2 = sum_k ||x_k||^4 - n ||S||_F^2
    double quartic = 0.0;
    for (Eigen::Index i = 0; i < Xc.rows(); ++i) {
        const double sq = Xc.row(i).squaredNorm();
        quartic += sq * sq;
    }
    const double b2 = std::min((quartic - n * S.squaredNorm()) / (n * n * p), d2);
    out.intensity = std::clamp(b2 / d2, 0.0, 1.0);
    out.matrix = (1.0 - out.intensity) * S +
                 out.intensity * out.tau * Eigen::MatrixXd::Identity(S.rows(), S.cols());
    return out;
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& M, double tol) {
    if (!M.allFinite()) throw std::invalid_argument("pseudo_inverse: non-finite input");
    Eigen::BDCSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double cutoff = sv.size() > 0 ? tol * sv(0) : 0.0;
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cutoff && sv(i) > 0.0) inv(i) = 1.0 / sv(i);
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

double logdet_psd(const Eigen::MatrixXd& M) {
    if (M.rows() != M.cols()) throw std::invalid_argument("logdet_psd: matrix must be square");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(((M + M.transpose()) * 0.5).eval(),
                                                      Eigen::EigenvaluesOnly);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        const double lambda = es.eigenvalues()(i);
        if (lambda < -1e-6)
            throw std::invalid_argument("logdet_psd: eigenvalue " + std::to_string(lambda) +
                                        " is negative; matrix is not PSD");
        if (lambda > 1e-12) sum += std::log(lambda);
    }
    return sum;
}

// --- Gaussian mixture ---

namespace {

/// Log density rows for a diagonal Gaussian mixture: N x K matrix of
/// log w_k + log N(x_i; mu_k, diag(var_k)).
Eigen::MatrixXd gmm_log_joint(const Eigen::MatrixXd& X, const Eigen::VectorXd& weights,
                              const Eigen::MatrixXd& means, const Eigen::MatrixXd& variances) {
    const Eigen::Index n = X.rows();
    const Eigen::Index k = weights.size();
    const Eigen::Index d = X.cols();
    Eigen::MatrixXd out(n, k);
    for (Eigen::Index c = 0; c < k; ++c) {
        const Eigen::ArrayXd var = variances.row(c).transpose().array();
        const double log_norm =
            -0.5 * (static_cast<double>(d) * std::log(2.0 * kPi) + var.log().sum());
        const double log_w = weights(c) > 0.0 ? std::log(weights(c))
                                              : -std::numeric_limits<double>::infinity();
        const Eigen::VectorXd inv_var = var.inverse().matrix();
        const Eigen::MatrixXd diff_sq = (X.rowwise() - means.row(c)).array().square().matrix();
        out.col(c) = (-0.5 * (diff_sq * inv_var)).array() + (log_w + log_norm);
    }
    return out;
}

}  // namespace

Eigen::MatrixXd GmmModel::responsibilities(const Eigen::MatrixXd& X) const {
    Eigen::MatrixXd lj = gmm_log_joint(X, weights, means, variances);
    for (Eigen::Index i = 0; i < lj.rows(); ++i) {
        const double lse = logsumexp_row(lj.row(i).transpose());
        lj.row(i) = (lj.row(i).array() - lse).exp();
    }
    return lj;
}

double GmmModel::mean_log_likelihood(const Eigen::MatrixXd& X) const {
    const Eigen::MatrixXd lj = gmm_log_joint(X, weights, means, variances);
    double total = 0.0;
    for (Eigen::Index i = 0; i < lj.rows(); ++i) total += logsumexp_row(lj.row(i).transpose());
    return total / static_cast<double>(X.rows());
}

GmmModel fit_gmm(const Eigen::MatrixXd& X, int num_components, std::uint64_t seed, int max_iter,
                 double tol) {
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();
    const Eigen::Index k = num_components;
    if (k < 1) throw std::invalid_argument("fit_gmm: need at least one component");
    if (n < k)
        throw std::invalid_argument("fit_gmm: " + std::to_string(n) + " samples cannot support " +
                                    std::to_string(k) + " components");

    // k-means++ seeding.
    Rng rng(seed);
    Eigen::MatrixXd means(k, d);
    means.row(0) = X.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
    Eigen::VectorXd min_sq = (X.rowwise() - means.row(0)).rowwise().squaredNorm();
    for (Eigen::Index c = 1; c < k; ++c) {
        const double total = min_sq.sum();
        Eigen::Index pick = 0;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double cum = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                cum += min_sq(i);
                if (cum >= target) {
                    pick = i;
                    break;
                }
                pick = i;
            }
        } else {
            pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
        }
        means.row(c) = X.row(pick);
        min_sq = min_sq.cwiseMin((X.rowwise() - means.row(c)).rowwise().squaredNorm());
    }

    // Initial weights/variances from the hard assignment to the seeds.
    const Eigen::VectorXd global_var =
        centered(X).array().square().colwise().mean().max(kGmmVarianceFloor).matrix().transpose();
    Eigen::VectorXd weights = Eigen::VectorXd::Zero(k);
    Eigen::MatrixXd variances(k, d);
    {
        std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
        Eigen::MatrixXd sq_sums = Eigen::MatrixXd::Zero(k, d);
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (Eigen::Index c = 0; c < k; ++c) {
                const double dist = (X.row(i) - means.row(c)).squaredNorm();
                if (dist < best_d) {
                    best_d = dist;
                    best = c;
                }
            }
            ++counts[static_cast<std::size_t>(best)];
            sums.row(best) += X.row(i);
            sq_sums.row(best) += X.row(i).array().square().matrix();
        }
        for (Eigen::Index c = 0; c < k; ++c) {
            const double nc = static_cast<double>(counts[static_cast<std::size_t>(c)]);
            weights(c) = std::max(nc, 1.0) / static_cast<double>(n);
            if (nc >= 2.0) {
                const Eigen::ArrayXd mu = sums.row(c).transpose().array() / nc;
                variances.row(c) = (sq_sums.row(c).transpose().array() / nc - mu.square())
                                       .max(kGmmVarianceFloor)
                                       .matrix();
            } else {
                variances.row(c) = global_var;
            }
        }
        weights /= weights.sum();
    }

    GmmModel model;
    model.weights = weights;
    model.means = means;
    model.variances = variances;
    model.converged = false;

    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < max_iter; ++iter) {
        // E step.
        Eigen::MatrixXd lj = gmm_log_joint(X, model.weights, model.means, model.variances);
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double lse = logsumexp_row(lj.row(i).transpose());
            ll += lse;
            lj.row(i) = (lj.row(i).array() - lse).exp();
        }
        ll /= static_cast<double>(n);
        model.log_likelihood_history.push_back(ll);

        // M step.
        const Eigen::VectorXd nk = lj.colwise().sum();
        for (Eigen::Index c = 0; c < k; ++c) {
            if (nk(c) < 1e-12) continue;  // collapsed component keeps its parameters
            const Eigen::VectorXd mu = (lj.col(c).transpose() * X).transpose() / nk(c);
            const Eigen::ArrayXXd diff = (X.rowwise() - mu.transpose()).array();
            const Eigen::VectorXd var =
                ((diff.square().colwise() * lj.col(c).array()).colwise().sum() / nk(c))
                    .max(kGmmVarianceFloor)
                    .matrix()
                    .transpose();
            model.means.row(c) = mu.transpose();
            model.variances.row(c) = var.transpose();
        }
        Eigen::VectorXd w = nk / static_cast<double>(n);
        model.weights = w / w.sum();

        if (iter > 0 && (ll - prev_ll) < tol * std::max(1.0, std::abs(prev_ll))) {
            model.converged = true;
            break;
        }
        prev_ll = ll;
    }
    return model;
}

// --- softmax head ---

namespace {

Eigen::MatrixXd with_bias(const Eigen::MatrixXd& X) {
    Eigen::MatrixXd out(X.rows(), X.cols() + 1);
    out.leftCols(X.cols()) = X;
    out.col(X.cols()).setOnes();
    return out;
}

/// Row-wise log-softmax of logits, in place; returns sum of -log p(y_i).
double cross_entropy_and_probs(Eigen::MatrixXd& logits, const LabelVector& y) {
    double ce = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double lse = logsumexp_row(logits.row(i).transpose());
        ce += lse - logits(i, y[i]);
        logits.row(i) = (logits.row(i).array() - lse).exp();
    }
    return ce;
}

double penalty_term(const Eigen::MatrixXd& w, double l2, bool penalize_bias) {
    if (penalize_bias) return 0.5 * l2 * w.squaredNorm();
    return 0.5 * l2 * w.leftCols(w.cols() - 1).squaredNorm();
}

}  // namespace

double softmax_objective(const Eigen::MatrixXd& w, const Eigen::MatrixXd& X, const LabelVector& y,
                         double l2, bool penalize_bias) {
    Eigen::MatrixXd logits = with_bias(X) * w.transpose();
    return cross_entropy_and_probs(logits, y) + penalty_term(w, l2, penalize_bias);
}

Eigen::MatrixXd softmax_gradient(const Eigen::MatrixXd& w, const Eigen::MatrixXd& X,
                                 const LabelVector& y, double l2, bool penalize_bias) {
    const Eigen::MatrixXd Xb = with_bias(X);
    Eigen::MatrixXd probs = Xb * w.transpose();
    cross_entropy_and_probs(probs, y);
    for (Eigen::Index i = 0; i < probs.rows(); ++i) probs(i, y[i]) -= 1.0;
    Eigen::MatrixXd grad = probs.transpose() * Xb;
    if (penalize_bias) {
        grad += l2 * w;
    } else {
        grad.leftCols(w.cols() - 1) += l2 * w.leftCols(w.cols() - 1);
    }
    return grad;
}

LinearModel minimize_softmax(const Eigen::MatrixXd& X, const LabelVector& y, double l2,
                             bool penalize_bias, int max_iter, double tol) {
    if (y.num_classes() < 2) throw std::invalid_argument("softmax head needs at least 2 classes");
    if (y.size() != X.rows()) throw std::invalid_argument("feature/label size mismatch");

    const Eigen::Index c = y.num_classes();
    const Eigen::Index p = X.cols() + 1;
    using Vec = Eigen::VectorXd;
    const auto to_vec = [&](const Eigen::MatrixXd& m) { return Vec(m.reshaped()); };
    const auto to_mat = [&](const Vec& v) { return Eigen::MatrixXd(v.reshaped(c, p)); };

    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(c, p);
    double f = softmax_objective(w, X, y, l2, penalize_bias);
    Vec g = to_vec(softmax_gradient(w, X, y, l2, penalize_bias));

    // L-BFGS two-loop recursion, memory 10, backtracking Armijo line search.
    const int memory = 10;
    std::deque<Vec> s_hist, y_hist;
    std::deque<double> rho_hist;

    LinearModel model;
    model.converged = false;
    int iter = 0;
    for (; iter < max_iter; ++iter) {
        if (g.lpNorm<Eigen::Infinity>() <= tol) {
            model.converged = true;
            break;
        }
        Vec q = g;
        std::vector<double> alpha(s_hist.size());
        for (std::size_t j = s_hist.size(); j-- > 0;) {
            alpha[j] = rho_hist[j] * s_hist[j].dot(q);
            q -= alpha[j] * y_hist[j];
        }
        if (!s_hist.empty()) {
            const Vec& s_last = s_hist.back();
            const Vec& y_last = y_hist.back();
            q *= s_last.dot(y_last) / y_last.squaredNorm();
        } else {
            q *= 1.0 / std::max(1.0, g.norm());
        }
        for (std::size_t j = 0; j < s_hist.size(); ++j) {
            const double beta = rho_hist[j] * y_hist[j].dot(q);
            q += (alpha[j] - beta) * s_hist[j];
        }
        Vec direction = -q;
        double slope = g.dot(direction);
        if (slope >= 0.0) {  // fall back to steepest descent
            direction = -g;
            slope = -g.squaredNorm();
        }

        double step = 1.0;
        const Vec w_vec = to_vec(w);
        double f_new = f;
        Vec w_new_vec = w_vec;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            w_new_vec = w_vec + step * direction;
            f_new = softmax_objective(to_mat(w_new_vec), X, y, l2, penalize_bias);
            if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;  // no descent possible at double precision

        const Eigen::MatrixXd w_new = to_mat(w_new_vec);
        const Vec g_new = to_vec(softmax_gradient(w_new, X, y, l2, penalize_bias));
        const Vec s = w_new_vec - w_vec;
        const Vec dy = g_new - g;
        const double sy = s.dot(dy);
        if (sy > 1e-12 * s.norm() * dy.norm()) {
            s_hist.push_back(s);
            y_hist.push_back(dy);
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        w = w_new;
        f = f_new;
        g = g_new;
    }

    model.weights = w;
    model.objective = f;
    model.iterations = iter;
    if (g.lpNorm<Eigen::Infinity>() <= tol) model.converged = true;
    return model;
}

LinearModel fit_logistic(const Eigen::MatrixXd& X, const LabelVector& y, double l2, int max_iter,
                         double tol) {
    return minimize_softmax(X, y, l2, /*penalize_bias=*/false, max_iter, tol);
}

Eigen::MatrixXd LinearModel::logits(const Eigen::MatrixXd& X) const {
    return with_bias(X) * weights.transpose();
}

std::vector<int> LinearModel::predict(const Eigen::MatrixXd& X) const {
    const Eigen::MatrixXd z = logits(X);
    std::vector<int> out(static_cast<std::size_t>(z.rows()));
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        Eigen::Index arg = 0;
        z.row(i).maxCoeff(&arg);  // first maximum wins, so ties go to the lowest class id
        out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    }
    return out;
}

FdaProjection fda_project(const FeatureMatrix& X, const LabelVector& y, double shrink) {
    const Eigen::MatrixXd& values = X.values();
    const Eigen::Index n = values.rows();
    const Eigen::Index d = values.cols();
    const int c = y.num_classes();
    if (c < 2) throw std::invalid_argument("fda_project needs at least 2 classes");
    if (n <= c) throw std::invalid_argument("fda_project needs more samples than classes");
    if (shrink < 0.0 || shrink > 1.0)
        throw std::invalid_argument("fda shrink must be in [0, 1]");
    if (y.size() != n) throw std::invalid_argument("feature/label size mismatch");

    const auto counts = y.class_counts();
    const Eigen::RowVectorXd global_mean = values.colwise().mean();
    Eigen::MatrixXd class_means = Eigen::MatrixXd::Zero(c, d);
    for (Eigen::Index i = 0; i < n; ++i) class_means.row(y[i]) += values.row(i);
    for (int k = 0; k < c; ++k) class_means.row(k) /= static_cast<double>(counts[k]);

    Eigen::MatrixXd sw = Eigen::MatrixXd::Zero(d, d);
    const auto buckets = y.indices_by_class();
    for (int k = 0; k < c; ++k) {
        Eigen::MatrixXd block = take_rows(values, buckets[static_cast<std::size_t>(k)]);
        block.rowwise() -= class_means.row(k);
        sw.selfadjointView<Eigen::Lower>().rankUpdate(block.transpose());
    }
    sw = Eigen::MatrixXd(sw.selfadjointView<Eigen::Lower>());
    sw /= static_cast<double>(n - c);

    const double tau = sw.trace() / static_cast<double>(d);
    if (!(tau > 0.0)) throw std::invalid_argument("fda_project: degenerate scatter (constant features)");
    Eigen::MatrixXd sw_reg =
        (1.0 - shrink) * sw + shrink * tau * Eigen::MatrixXd::Identity(d, d);

    Eigen::MatrixXd sb = Eigen::MatrixXd::Zero(d, d);
    for (int k = 0; k < c; ++k) {
        const Eigen::RowVectorXd diff = class_means.row(k) - global_mean;
        sb += (static_cast<double>(counts[k]) / static_cast<double>(n)) *
              (diff.transpose() * diff);
    }

    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(sb, sw_reg);
    if (solver.info() != Eigen::Success)
        throw std::runtime_error("fda_project: generalized eigensolver failed");

    // Eigenvalues come out ascending; keep the top C-1 in descending order.
    Eigen::MatrixXd directions(c - 1, d);
    for (int r = 0; r < c - 1; ++r) {
        Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - r);
        v.normalize();
        directions.row(r) = v.transpose();
    }
    fix_signs(directions);
    return {directions, FeatureMatrix(values * directions.transpose())};
}

}  // namespace transferbench
