#pragma once

#include <Eigen/Dense>
#include <Eigen/QR>
#include <cmath>
#include <random>

namespace bnflow {

inline Eigen::VectorXd random_unit_vector(Eigen::Index d, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd v(d);
    do {
        for (Eigen::Index j = 0; j < d; ++j) v(j) = gauss(rng);
    } while (v.norm() < 1e-8);
    return v.normalized();
}

/// Random SPD matrix with condition number up to `cond`: random orthogonal
/// basis, log-uniform spectrum in [1/cond, 1].
inline Eigen::MatrixXd random_spd(Eigen::Index d, double cond, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd g(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) g(i, j) = gauss(rng);
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();

    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::VectorXd eig(d);
    eig(0) = 1.0;
    if (d > 1) eig(d - 1) = 1.0 / cond;
    for (Eigen::Index i = 1; i + 1 < d; ++i) eig(i) = std::pow(cond, -unif(rng));
    return q * eig.asDiagonal() * q.transpose();
}

/// Random nonzero vector in T_b Omega = { v : v' Sigma b = 0 }, built by
/// projecting a Gaussian draw against Sigma b.
inline Eigen::VectorXd random_tangent(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& b_bar,
                                      std::mt19937_64& rng) {
    const Eigen::VectorXd sb = sigma * b_bar;
    const Eigen::VectorXd n = sb.normalized();
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd v(b_bar.size());
    double norm = 0.0;
    do {
        for (Eigen::Index j = 0; j < v.size(); ++j) v(j) = gauss(rng);
        v -= n * n.dot(v);
        norm = v.norm();
    } while (norm < 1e-8);
    return v;
}

} // namespace bnflow
