#include "transferbench/affinity.hpp"

#include <cmath>
#include <stdexcept>

namespace transferbench {

namespace {

/// Rounding can push cosine/correlation distances a hair negative.
double clamp_distance(double d) {
    return d < 0.0 ? 0.0 : d;
}

/// Rows normalized to unit length; throws naming the first zero row.
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& X, const char* what) {
    Eigen::MatrixXd out = X;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double norm = out.row(i).norm();
        if (norm <= 0.0)
            throw std::invalid_argument(std::string(what) + " undefined: row " + std::to_string(i) +
                                        " is a zero vector");
        out.row(i) /= norm;
    }
    return out;
}

/// Rows centered across dimensions; throws naming the first constant row.
Eigen::MatrixXd center_rows(const Eigen::MatrixXd& X) {
    Eigen::MatrixXd out = X;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        out.row(i).array() -= out.row(i).mean();
        if (out.row(i).norm() <= 0.0)
            throw std::invalid_argument("correlation distance undefined: row " + std::to_string(i) +
                                        " is constant");
    }
    return out;
}

/// 1 - X_hat X_hat^T on unit rows, exact zero diagonal, mirrored lower half.
Eigen::MatrixXd one_minus_gram(const Eigen::MatrixXd& unit_rows) {
    const Eigen::Index n = unit_rows.rows();
    Eigen::MatrixXd g = unit_rows * unit_rows.transpose();
    Eigen::MatrixXd dist(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        dist(i, i) = 0.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double d = clamp_distance(1.0 - std::clamp(g(i, j), -1.0, 1.0));
            dist(i, j) = d;
            dist(j, i) = d;
        }
    }
    return dist;
}

Eigen::MatrixXd pairwise_matrix(const Eigen::MatrixXd& X, AffinityKind kind) {
    const Eigen::Index n = X.rows();
    switch (kind) {
        case AffinityKind::euclidean: {
            const Eigen::VectorXd sq = X.rowwise().squaredNorm();
            Eigen::MatrixXd g = X * X.transpose();
            Eigen::MatrixXd dist(n, n);
            for (Eigen::Index i = 0; i < n; ++i) {
                dist(i, i) = 0.0;
                for (Eigen::Index j = i + 1; j < n; ++j) {
                    const double d2 = std::max(0.0, sq(i) + sq(j) - 2.0 * g(i, j));
                    const double d = std::sqrt(d2);
                    dist(i, j) = d;
                    dist(j, i) = d;
                }
            }
            return dist;
        }
        case AffinityKind::cosine:
            return one_minus_gram(normalize_rows(X, "cosine distance"));
        case AffinityKind::correlation:
            return one_minus_gram(normalize_rows(center_rows(X), "correlation distance"));
    }
    throw std::logic_error("unreachable affinity kind");
}

}  // namespace

AffinityKind parse_affinity(std::string_view name) {
    if (name == "euclidean") return AffinityKind::euclidean;
    if (name == "cosine") return AffinityKind::cosine;
    if (name == "correlation") return AffinityKind::correlation;
    throw std::invalid_argument("unknown affinity kind '" + std::string(name) +
                                "' (expected euclidean, cosine or correlation)");
}

std::string_view to_string(AffinityKind kind) {
    switch (kind) {
        case AffinityKind::euclidean: return "euclidean";
        case AffinityKind::cosine: return "cosine";
        case AffinityKind::correlation: return "correlation";
    }
    return "?";
}

double distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b, AffinityKind kind) {
    if (a.size() != b.size())
        throw std::invalid_argument("distance: vectors have different lengths");
    switch (kind) {
        case AffinityKind::euclidean:
            return (a - b).norm();
        case AffinityKind::cosine: {
            const double na = a.norm();
            const double nb = b.norm();
            if (na <= 0.0 || nb <= 0.0)
                throw std::invalid_argument("cosine distance undefined for a zero vector");
            const double sim = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
            return clamp_distance(1.0 - sim);
        }
        case AffinityKind::correlation: {
            const Eigen::VectorXd ac = a.array() - a.mean();
            const Eigen::VectorXd bc = b.array() - b.mean();
            const double na = ac.norm();
            const double nb = bc.norm();
            if (na <= 0.0 || nb <= 0.0)
                throw std::invalid_argument("correlation distance undefined for a constant vector");
            const double r = std::clamp(ac.dot(bc) / (na * nb), -1.0, 1.0);
            return clamp_distance(1.0 - r);
        }
    }
    throw std::logic_error("unreachable affinity kind");
}

AffinityGraph::AffinityGraph(Eigen::MatrixXd dist) : dist_(std::move(dist)) {
    if (dist_.rows() != dist_.cols()) throw std::invalid_argument("affinity graph must be square");
    if (dist_.rows() < 1) throw std::invalid_argument("affinity graph must be non-empty");
    for (Eigen::Index i = 0; i < dist_.rows(); ++i) {
        if (dist_(i, i) != 0.0)
            throw std::invalid_argument("affinity graph diagonal must be exactly zero");
        for (Eigen::Index j = i + 1; j < dist_.cols(); ++j) {
            if (std::abs(dist_(i, j) - dist_(j, i)) > 1e-10)
                throw std::invalid_argument("affinity graph is not symmetric");
            if (dist_(i, j) < -1e-12) throw std::invalid_argument("negative affinity entry");
        }
    }
}

std::vector<double> AffinityGraph::lower_triangle() const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(dist_.rows() * (dist_.rows() - 1) / 2));
    for (Eigen::Index i = 1; i < dist_.rows(); ++i)
        for (Eigen::Index j = 0; j < i; ++j) out.push_back(dist_(i, j));
    return out;
}

AffinityGraph pairwise_graph(const FeatureMatrix& X, AffinityKind kind) {
    if (X.rows() < 2) throw std::invalid_argument("pairwise_graph needs at least 2 samples");
    return AffinityGraph(pairwise_matrix(X.values(), kind), AffinityGraph::Unchecked{});
}

Eigen::MatrixXd affinity_rows(const Eigen::MatrixXd& X, AffinityKind kind) {
    switch (kind) {
        case AffinityKind::euclidean: return X;
        case AffinityKind::cosine: return normalize_rows(X, "cosine distance");
        case AffinityKind::correlation:
            return normalize_rows(center_rows(X), "correlation distance");
    }
    throw std::logic_error("unreachable affinity kind");
}

Eigen::MatrixXd cross_distances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                AffinityKind kind) {
    if (kind == AffinityKind::euclidean) {
        const Eigen::VectorXd sq_a = a.rowwise().squaredNorm();
        const Eigen::VectorXd sq_b = b.rowwise().squaredNorm();
        Eigen::MatrixXd d = a * b.transpose();
        for (Eigen::Index i = 0; i < d.rows(); ++i)
            for (Eigen::Index j = 0; j < d.cols(); ++j)
                d(i, j) = std::sqrt(std::max(0.0, sq_a(i) + sq_b(j) - 2.0 * d(i, j)));
        return d;
    }
    Eigen::MatrixXd d = a * b.transpose();
    for (Eigen::Index i = 0; i < d.rows(); ++i)
        for (Eigen::Index j = 0; j < d.cols(); ++j)
            d(i, j) = clamp_distance(1.0 - std::clamp(d(i, j), -1.0, 1.0));
    return d;
}

AffinityGraph label_graph(const LabelVector& y, AffinityKind kind) {
    if (y.num_classes() < 2) throw std::invalid_argument("label_graph needs at least 2 classes");
    Eigen::MatrixXd one_hot = Eigen::MatrixXd::Zero(y.size(), y.num_classes());
    for (Eigen::Index i = 0; i < y.size(); ++i) one_hot(i, y[i]) = 1.0;
    return AffinityGraph(pairwise_matrix(one_hot, kind), AffinityGraph::Unchecked{});
}

}  // namespace transferbench
