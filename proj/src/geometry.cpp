#include "bnflow/geometry.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>
#include <string>

namespace bnflow {

namespace {
constexpr double kOnOmegaStrict = 1e-8;
constexpr double kOnOmegaReproject = 1e-6;
} // namespace

ManifoldMetric::ManifoldMetric(Eigen::MatrixXd sigma, double pinv_tol)
    : sigma_(std::move(sigma)), pinv_tol_(pinv_tol) {
    if (sigma_.rows() != sigma_.cols() || sigma_.rows() == 0)
        throw std::invalid_argument("ManifoldMetric: Sigma must be square and non-empty");
    if ((sigma_ - sigma_.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw std::invalid_argument("ManifoldMetric: Sigma must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma_);
    if (es.eigenvalues().minCoeff() <= 0.0)
        throw std::invalid_argument("ManifoldMetric: Sigma must be positive definite");
    sigma_sq_ = sigma_ * sigma_;
}

double ManifoldMetric::sigma_norm(const Eigen::VectorXd& b) const {
    if (b.size() != dim()) throw std::invalid_argument("sigma_norm: dimension mismatch");
    if (b.norm() == 0.0)
        throw std::invalid_argument("sigma_norm: b = 0, normalization undefined");
    return std::sqrt(b.dot(sigma_ * b));
}

Eigen::VectorXd ManifoldMetric::normalize_to_omega(const Eigen::VectorXd& b) const {
    return b / sigma_norm(b);
}

bool ManifoldMetric::on_omega(const Eigen::VectorXd& b, double tol) const {
    return std::abs(sigma_norm(b) - 1.0) <= tol;
}

Eigen::VectorXd ManifoldMetric::require_on_omega(const Eigen::VectorXd& b_bar) const {
    const double drift = std::abs(sigma_norm(b_bar) - 1.0);
    if (drift <= kOnOmegaStrict) return b_bar;
    if (drift <= kOnOmegaReproject) return normalize_to_omega(b_bar);
    throw std::invalid_argument("base point off Omega, |  ||b||_Sigma - 1 | = " +
                                std::to_string(drift));
}

Eigen::MatrixXd ManifoldMetric::tangent_projection(const Eigen::VectorXd& b_bar) const {
    const Eigen::VectorXd b = require_on_omega(b_bar);
    const Eigen::VectorXd sb = sigma_ * b;
    const double denom = b.dot(sigma_sq_ * b);
    const Eigen::Index d = dim();
    return Eigen::MatrixXd::Identity(d, d) - (sb * sb.transpose()) / denom;
}

Eigen::MatrixXd ManifoldMetric::psd_pinv(const Eigen::MatrixXd& mat) const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mat);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("psd_pinv: eigendecomposition failed");
    const Eigen::VectorXd& ev = es.eigenvalues();
    const double cutoff = pinv_tol_ * std::max(ev.cwiseAbs().maxCoeff(), 0.0);
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (ev(i) > cutoff) inv(i) = 1.0 / ev(i);
    return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::MatrixXd ManifoldMetric::metric_matrix(const Eigen::VectorXd& b_bar) const {
    const Eigen::VectorXd b = require_on_omega(b_bar);
    const Eigen::Index d = dim();
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
    const Eigen::MatrixXd right = eye - sigma_ * b * b.transpose(); // I - Sigma b b'
    const Eigen::MatrixXd core = right.transpose() * right;         // (I - b b' Sigma)(I - Sigma b b')
    return tangent_projection(b) * psd_pinv(core) / b.squaredNorm();
}

TangentVector ManifoldMetric::manifold_gradient(const Eigen::VectorXd& b_bar,
                                                const Eigen::VectorXd& euclid_grad) const {
    const Eigen::VectorXd b = require_on_omega(b_bar);
    if (euclid_grad.size() != dim())
        throw std::invalid_argument("manifold_gradient: gradient dimension mismatch");
    const Eigen::VectorXd sb = sigma_ * b;
    // (I - Sigma b b') g, then (I - b b' Sigma) of that
    const Eigen::VectorXd inner = euclid_grad - sb * (b.dot(euclid_grad));
    const Eigen::VectorXd proj = inner - b * (sb.dot(inner));
    return TangentVector{b, b.squaredNorm() * proj};
}

RegularPointResult regular_point_check(const TangentVector& tangent_grad,
                                       const ManifoldMetric& metric) {
    const Eigen::VectorXd& b = tangent_grad.base;
    const Eigen::VectorXd& g = tangent_grad.vec;
    if (b.size() != g.size() || b.size() != metric.dim())
        throw std::invalid_argument("regular_point_check: dimension mismatch");
    const Eigen::VectorXd sb = metric.sigma() * b;
    const double tangency = std::abs(g.dot(sb));
    if (tangency > 1e-9 * std::max(1.0, g.norm() * sb.norm()))
        throw std::invalid_argument("regular_point_check: gradient is not tangent at base");

    RegularPointResult out;
    out.quadratic_form = g.squaredNorm() - g.dot(sb) * b.dot(g); // = ||g||^2 on tangents
    out.is_regular =
        g.norm() > 0.0 && metric.manifold_gradient(b, g).vec.norm() > 0.0;
    return out;
}

} // namespace bnflow
