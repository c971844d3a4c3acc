#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "bnflow/activation.hpp"

namespace bnflow {

/// Finite sample set standing in for the data distribution mu. Population
/// expectations are exact averages over the stored samples, so the second
/// moment Sigma is computed once and kept consistent with `samples`.
///
/// Construction validates:
///   - Sigma symmetric and consistent with the samples,
///   - centered data (sample mean below `centering_tol`) when flagged,
///   - Sigma positive definite (lambda_min > pd_tol_rel * lambda_max).
class DataDistribution {
public:
    DataDistribution(Eigen::MatrixXd samples, Eigen::VectorXd targets,
                     double centering_tol = 1e-8, double pd_tol_rel = 1e-10);

    const Eigen::MatrixXd& samples() const { return samples_; } // n x d
    const Eigen::VectorXd& targets() const { return targets_; } // n
    const Eigen::MatrixXd& sigma() const { return sigma_; }     // d x d
    bool centered() const { return centered_; }

    Eigen::Index n() const { return samples_.rows(); }
    Eigen::Index d() const { return samples_.cols(); }

    double sigma_lambda_min() const { return lambda_min_; }
    double sigma_lambda_max() const { return lambda_max_; }

    /// Same samples, different targets.
    DataDistribution with_targets(Eigen::VectorXd targets) const;

private:
    Eigen::MatrixXd samples_;
    Eigen::VectorXd targets_;
    Eigen::MatrixXd sigma_;
    bool centered_ = false;
    double lambda_min_ = 0.0;
    double lambda_max_ = 0.0;
};

/// Lipschitz data for the speed bound |a_dot| <= A + B r.
struct RegularityConstants {
    double c_x = 0.0;     // bound on ||x||
    double l_sigma = 0.0; // activation Lipschitz constant
    double l_lprime = 0.0;
    double sigma0 = 0.0;  // |sigma(0)|
    double lprime0 = 0.0; // bound on |l'(0, y)| over stored targets
    double c_b = 0.0;     // sup over Omega of ||b_bar|| = lambda_min(Sigma)^{-1/2}

    // A + B r bounds |a_dot| whenever the ensemble stays in [-r, r] x Omega.
    double speed_a = 0.0;
    double speed_b = 0.0;

    double speed_bound(double r) const { return speed_a + speed_b * r; }
};

/// Generator for supervised targets: a fixed two-layer BN network plus
/// optional Gaussian noise.
struct TeacherSpec {
    struct TeacherNeuron {
        double a;
        Eigen::VectorXd b;
    };
    std::vector<TeacherNeuron> neurons;
    Activation act = Activation::identity();
    double noise_std = 0.0;
};

enum class CenterPolicy { Reject, Recenter };

/// i.i.d. centered Gaussian samples with covariance `sigma_spec`, exactly
/// recentered so the sample mean is zero. Targets are initialized to zero;
/// use teacher_targets to attach a regression task.
DataDistribution generate_gaussian(Eigen::Index d, Eigen::Index n,
                                   const Eigen::MatrixXd& sigma_spec, std::uint64_t seed);

/// CSV loader, header `x1,...,xd,y`, one sample per row.
DataDistribution load_csv(const std::string& path, CenterPolicy policy,
                          double centering_tol = 1e-8);

DataDistribution teacher_targets(const DataDistribution& dist, const TeacherSpec& spec,
                                 std::uint64_t seed);

RegularityConstants regularity_constants(const DataDistribution& dist, double r,
                                         const Activation& act, const LossFn& loss);

} // namespace bnflow
