#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "bnflow/activation.hpp"
#include "bnflow/data_model.hpp"
#include "bnflow/geometry.hpp"

namespace bnflow {

/// Coordinate system the ensemble's gradient flow lives in:
///   BnEuclidean - raw weights b, normalized inside the forward pass,
///   Manifold    - weights kept on Omega, flow driven by the manifold gradient,
///   Vanilla     - no normalization anywhere.
enum class Mode { BnEuclidean, Manifold, Vanilla };

struct Neuron {
    double a = 0.0;
    Eigen::VectorXd b;
};

struct Velocity {
    double a_dot = 0.0;
    Eigen::VectorXd b_dot;
};

struct Ensemble {
    std::vector<Neuron> neurons;
    Mode mode = Mode::BnEuclidean;
    Activation act = Activation::leaky_relu(0.01);
    LossFn loss;

    Eigen::Index width() const { return static_cast<Eigen::Index>(neurons.size()); }
    Eigen::Index dim() const { return neurons.empty() ? 0 : neurons.front().b.size(); }
};

struct TrajectoryLog {
    std::vector<double> times;
    std::vector<Ensemble> states;
    std::vector<double> losses;
    std::vector<std::vector<Velocity>> velocities;

    std::size_t size() const { return times.size(); }
};

enum class Scheme { Euler, Rk4 };
enum class Retraction { None, Renormalize };

struct IntegrateOptions {
    Scheme scheme = Scheme::Rk4;
    double dt = 1e-3;
    double t_end = 1.0;
    Retraction retraction = Retraction::Renormalize;
    // Snapshot every `record_every` steps (initial and final states always kept).
    std::size_t record_every = 1;
};

struct EquivalenceReport {
    double max_param_deviation = 0.0;
    double max_loss_deviation = 0.0;
};

/// Checks mode-specific invariants (nonzero b in BN mode, on-Omega in
/// manifold mode, m >= 1, consistent dimensions); throws on violation.
void validate(const Ensemble& ensemble, const ManifoldMetric& metric);

/// Model predictions on every sample. BN and manifold modes read only the
/// normalized direction T(b); vanilla uses b as-is.
Eigen::VectorXd forward(const Ensemble& ensemble, const DataDistribution& dist,
                        const ManifoldMetric& metric);

double loss(const Ensemble& ensemble, const DataDistribution& dist,
            const ManifoldMetric& metric);

/// Per-sample loss derivative l'(f(x_i), y_i), the shared residual of all RHS.
Eigen::VectorXd residuals(const Ensemble& ensemble, const DataDistribution& dist,
                          const ManifoldMetric& metric);

/// Negative Euclidean gradient of L for the BN model in raw coordinates.
/// b_dot is exactly orthogonal to b, so ||b|| is conserved by the flow.
std::vector<Velocity> rhs_bn_euclidean(const Ensemble& ensemble, const DataDistribution& dist,
                                       const ManifoldMetric& metric);

/// Negative manifold gradient of L0 on M = R x Omega; b_dot lies in the
/// tangent space T_b Omega. Off-Omega arguments are read through T (the field
/// is extended constant along rays), so integrator stage drift is benign.
std::vector<Velocity> rhs_manifold(const Ensemble& ensemble, const DataDistribution& dist,
                                   const ManifoldMetric& metric);

/// Negative Euclidean gradient for the vanilla (non-BN) model.
std::vector<Velocity> rhs_vanilla(const Ensemble& ensemble, const DataDistribution& dist);

/// Mode-dispatched right-hand side.
std::vector<Velocity> rhs(const Ensemble& ensemble, const DataDistribution& dist,
                          const ManifoldMetric& metric);

TrajectoryLog integrate(const Ensemble& init, const DataDistribution& dist,
                        const ManifoldMetric& metric, const IntegrateOptions& opts);

/// One explicit gradient-descent step in BN mode. The update is tangent to
/// the sphere ||b|| = const, so ||b_new||^2 = ||b_old||^2 + lr^2 ||b_dot||^2.
Ensemble gd_step(const Ensemble& ensemble, const DataDistribution& dist,
                 const ManifoldMetric& metric, double lr);

/// Integrates the BN flow, pushes every snapshot through id x T, integrates
/// the manifold flow from the mapped initial state, and reports sup-over-time
/// deviations of the two normalized trajectories. For the trajectories to
/// coincide with general activations, init must use unit Euclidean norms
/// (positively homogeneous activations are insensitive to the init scale).
EquivalenceReport equivalence_report(const Ensemble& init, const DataDistribution& dist,
                                     const ManifoldMetric& metric, double dt, double t_end,
                                     Scheme scheme = Scheme::Rk4);

/// CSV export: t, k, a, b_1..b_d, adot, bdot_1..bdot_d, loss.
void export_trajectory_csv(const TrajectoryLog& log, const std::string& path);

} // namespace bnflow
