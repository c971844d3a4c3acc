#pragma once

#include <Eigen/Dense>

namespace bnflow {

/// Tangent vector to Omega = { b : ||b||_Sigma = 1 } at `base`, i.e.
/// vec' * Sigma * base = 0.
struct TangentVector {
    Eigen::VectorXd base;
    Eigen::VectorXd vec;
};

struct RegularPointResult {
    bool is_regular = false;
    double quadratic_form = 0.0;
};

/// Sigma-induced geometry of the normalization manifold: the Sigma-norm, the
/// normalization map T b = b / ||b||_Sigma, the tangent projector onto
/// T_b Omega, the Riemannian metric matrix and the manifold gradient.
///
/// Off-manifold base points are tolerated up to a drift of 1e-6 (they are
/// re-projected internally); beyond that the operation throws. Dimensions are
/// small by contract, so everything is dense.
class ManifoldMetric {
public:
    explicit ManifoldMetric(Eigen::MatrixXd sigma, double pinv_tol = 1e-10);

    const Eigen::MatrixXd& sigma() const { return sigma_; }
    const Eigen::MatrixXd& sigma_sq() const { return sigma_sq_; }
    Eigen::Index dim() const { return sigma_.rows(); }
    double pinv_tol() const { return pinv_tol_; }

    /// sqrt(b' Sigma b); throws on b = 0 (normalization undefined there).
    double sigma_norm(const Eigen::VectorXd& b) const;

    /// T b = b / ||b||_Sigma.
    Eigen::VectorXd normalize_to_omega(const Eigen::VectorXd& b) const;

    bool on_omega(const Eigen::VectorXd& b, double tol = 1e-8) const;

    /// Orthogonal projector onto T_b Omega:
    ///   P = I - Sigma b b' Sigma / (b' Sigma^2 b).
    Eigen::MatrixXd tangent_projection(const Eigen::VectorXd& b_bar) const;

    /// Metric matrix on T_b Omega:
    ///   G = (1/||b||^2) P [(I - b b' Sigma)(I - Sigma b b')]^+.
    /// The pseudo-inverse zeroes the single null eigenvalue (direction
    /// Sigma b) via a symmetric eigendecomposition.
    Eigen::MatrixXd metric_matrix(const Eigen::VectorXd& b_bar) const;

    /// Manifold gradient of a function with Euclidean gradient `euclid_grad`:
    ///   ||b||^2 (I - b b' Sigma)(I - Sigma b b') euclid_grad,
    /// the unique tangent vector g with G g = P euclid_grad.
    TangentVector manifold_gradient(const Eigen::VectorXd& b_bar,
                                    const Eigen::VectorXd& euclid_grad) const;

    /// Moore-Penrose pseudo-inverse of a symmetric PSD matrix, relative
    /// eigenvalue cutoff pinv_tol.
    Eigen::MatrixXd psd_pinv(const Eigen::MatrixXd& mat) const;

private:
    /// Validates the on-Omega precondition, re-projecting small drift.
    Eigen::VectorXd require_on_omega(const Eigen::VectorXd& b_bar) const;

    Eigen::MatrixXd sigma_;
    Eigen::MatrixXd sigma_sq_;
    double pinv_tol_;
};

/// Identity from the regular-point argument: for tangent v at b_bar,
/// v' (I - Sigma b b') v = ||v||^2, and a nonzero tangent gradient has a
/// nonzero manifold gradient.
RegularPointResult regular_point_check(const TangentVector& tangent_grad,
                                       const ManifoldMetric& metric);

} // namespace bnflow
