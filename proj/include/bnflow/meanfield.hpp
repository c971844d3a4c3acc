#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "bnflow/data_model.hpp"
#include "bnflow/dynamics.hpp"
#include "bnflow/geometry.hpp"

namespace bnflow {

/// Uniform atomic measure (1/m) sum of deltas on M = R x Omega.
struct EmpiricalMeasure {
    struct Atom {
        double a = 0.0;
        Eigen::VectorXd b_bar;
    };
    std::vector<Atom> atoms;

    Eigen::Index size() const { return static_cast<Eigen::Index>(atoms.size()); }
    double weight() const { return 1.0 / static_cast<double>(atoms.size()); }

    /// Atom embedded in R^{d+1}, the ambient space used as W2 ground metric.
    Eigen::VectorXd ambient(Eigen::Index k) const;
};

/// Coupling found by the exact transport solve. For equal-size clouds the
/// plan is a permutation; unequal clouds are expanded to a common atom count
/// before solving, and the plan is reported as a doubly-stochastic matrix on
/// the original atoms.
struct TransportPlan {
    Eigen::MatrixXd coupling; // rows: mu atoms, cols: nu atoms; entries sum to 1
    double cost = 0.0;        // sum over the plan of squared ground distance
};

struct W2Result {
    double distance = 0.0;
    TransportPlan plan;
};

struct SpeedBoundReport {
    double r = 0.0;
    double speed_a = 0.0;
    double speed_b = 0.0;
    double max_adot_observed = 0.0;
    double t_r_lower = 0.0;
    bool violated = false;
};

struct ConvergenceCell {
    Eigen::Index m = 0;
    Eigen::Index m_prime = 0;
    double t = 0.0;
    std::uint64_t seed = 0;
    double w2 = 0.0;
};

struct ConvergenceTable {
    std::vector<ConvergenceCell> cells;
    // Fraction of (m, t) cells whose seed-median W2 drops when m quadruples.
    double decreasing_fraction = 0.0;
};

/// How particle-limit ensembles are initialized: a in {-1, +1}, b uniform on
/// the Euclidean unit sphere, pushed to Omega. With `paired` set, clouds of
/// increasing width share a common atom stream, so the m-atom cloud is a
/// prefix of the 4m-atom cloud.
struct InitLaw {
    std::uint64_t seed = 0;
    bool paired = true;
};

/// Maps an ensemble to its empirical measure through id x T. Preserves the
/// represented function exactly.
EmpiricalMeasure pushforward(const Ensemble& ensemble, const ManifoldMetric& metric);

/// Mean-field velocity at each atom (no 1/m factor; velocities are
/// per-particle under rho). Equals width * rhs_manifold on the matching
/// ensemble.
std::vector<Velocity> velocity_field(const EmpiricalMeasure& measure, const Ensemble& like,
                                     const DataDistribution& dist, const ManifoldMetric& metric);

/// Exact empirical 2-Wasserstein distance, ambient Euclidean ground cost on
/// R^{d+1}. Equal cardinality: optimal assignment. Unequal: the discrete LP,
/// solved exactly on the lcm expansion of the two uniform clouds.
W2Result w2_empirical(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu);

/// Exact min-cost assignment of a square cost matrix; returns column index
/// assigned to each row. O(n^3) shortest augmenting path.
std::vector<Eigen::Index> solve_assignment(const Eigen::MatrixXd& cost);

/// Post-hoc audit of the |a_dot| <= A + B r bound along a trajectory.
/// `r` is taken as max(r0, observed max |a|).
SpeedBoundReport speed_bound_audit(const TrajectoryLog& log, const RegularityConstants& consts,
                                   double r0);

struct ParticleLimitOptions {
    std::vector<Eigen::Index> m_list;
    std::vector<double> t_grid;
    std::vector<std::uint64_t> seeds;
    InitLaw init_law;
    Activation act = Activation::leaky_relu(0.01);
    LossFn loss_fn;
    double dt = 1e-2; // step in mean-field time
};

/// W2(rho_m_t, rho_m'_t) for consecutive widths, per time and seed, under the
/// manifold flow on shared data. Times are mean-field: atoms move with the
/// per-particle velocity_field, so every width shares one clock.
ConvergenceTable particle_limit_study(const DataDistribution& dist, const ManifoldMetric& metric,
                                      const ParticleLimitOptions& opts);

} // namespace bnflow
