#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "bnflow/data_model.hpp"
#include "bnflow/dynamics.hpp"
#include "bnflow/geometry.hpp"
#include "bnflow/meanfield.hpp"
#include "bnflow/random.hpp"

using namespace bnflow;

namespace {

DataDistribution random_task(std::uint64_t seed, Eigen::Index n = 128) {
    Eigen::MatrixXd sigma(2, 2);
    sigma << 5, 0, 0, 1;
    DataDistribution dist = generate_gaussian(2, n, sigma, seed);
    std::mt19937_64 rng(seed ^ 0x5151ULL);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd y(dist.n());
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = gauss(rng);
    return dist.with_targets(y);
}

EmpiricalMeasure random_measure(Eigen::Index m, const ManifoldMetric& metric,
                                std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    EmpiricalMeasure mu;
    for (Eigen::Index k = 0; k < m; ++k)
        mu.atoms.push_back({gauss(rng), metric.normalize_to_omega(random_unit_vector(metric.dim(), rng))});
    return mu;
}

// Minimum over all matchings of the mean squared ambient distance; only
// usable for tiny equal-size clouds.
double w2_brute_equal(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    const Eigen::Index m = mu.size();
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double cost = 0.0;
        for (Eigen::Index i = 0; i < m; ++i)
            cost += (mu.ambient(i) - nu.ambient(perm[static_cast<std::size_t>(i)])).squaredNorm();
        best = std::min(best, cost / static_cast<double>(m));
    } while (std::next_permutation(perm.begin(), perm.end()));
    return std::sqrt(best);
}

// Brute-force LP for unequal uniform clouds via the lcm expansion.
double w2_brute_unequal(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    const Eigen::Index l = std::lcm(mu.size(), nu.size());
    EmpiricalMeasure emu, enu;
    for (Eigen::Index i = 0; i < mu.size(); ++i)
        for (Eigen::Index r = 0; r < l / mu.size(); ++r) emu.atoms.push_back(mu.atoms[static_cast<std::size_t>(i)]);
    for (Eigen::Index i = 0; i < nu.size(); ++i)
        for (Eigen::Index r = 0; r < l / nu.size(); ++r) enu.atoms.push_back(nu.atoms[static_cast<std::size_t>(i)]);
    return w2_brute_equal(emu, enu);
}

} // namespace

TEST_CASE("pushforward: hand values and function preservation") {
    Eigen::MatrixXd sigma(2, 2);
    sigma << 5, 0, 0, 1;
    const ManifoldMetric metric(sigma);

    Ensemble e;
    e.mode = Mode::BnEuclidean;
    e.act = Activation::relu();
    Eigen::VectorXd b1(2), b2(2);
    b1 << 1, 0;
    b2 << 0, 2;
    e.neurons.push_back({1.5, b1});
    e.neurons.push_back({-0.5, b2});

    const EmpiricalMeasure mu = pushforward(e, metric);
    REQUIRE(mu.size() == 2);
    CHECK(mu.atoms[0].a == 1.5);
    CHECK(mu.atoms[0].b_bar(0) == doctest::Approx(1.0 / std::sqrt(5.0)).epsilon(1e-14));
    CHECK(mu.atoms[0].b_bar(1) == doctest::Approx(0.0));
    CHECK(mu.atoms[1].b_bar(0) == doctest::Approx(0.0));
    CHECK(mu.atoms[1].b_bar(1) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(mu.ambient(0)(0) == 1.5);
    CHECK(mu.ambient(0).size() == 3);

    const DataDistribution dist = random_task(31);
    Ensemble on_omega = e;
    on_omega.mode = Mode::Manifold;
    for (std::size_t k = 0; k < on_omega.neurons.size(); ++k)
        on_omega.neurons[k].b = mu.atoms[k].b_bar;
    CHECK((forward(e, dist, metric) - forward(on_omega, dist, metric)).cwiseAbs().maxCoeff() <= 1e-13);
}

TEST_CASE("velocity_field equals width times the per-ensemble velocity") {
    const DataDistribution dist = random_task(32);
    const ManifoldMetric metric(dist.sigma());
    std::mt19937_64 rng(33);
    const EmpiricalMeasure mu = random_measure(6, metric, rng);

    Ensemble like;
    like.mode = Mode::Manifold;
    like.act = Activation::leaky_relu(0.01);
    Ensemble ens = like;
    for (const auto& atom : mu.atoms) ens.neurons.push_back({atom.a, atom.b_bar});

    const std::vector<Velocity> field = velocity_field(mu, like, dist, metric);
    const std::vector<Velocity> per = rhs_manifold(ens, dist, metric);
    const double m = static_cast<double>(mu.size());
    REQUIRE(field.size() == per.size());
    for (std::size_t k = 0; k < field.size(); ++k) {
        CHECK(std::abs(field[k].a_dot - m * per[k].a_dot) <= 1e-12 * (1 + std::abs(field[k].a_dot)));
        CHECK((field[k].b_dot - m * per[k].b_dot).norm() <= 1e-12 * (1 + field[k].b_dot.norm()));
    }
}

TEST_CASE("w2_empirical: identity, single atoms, symmetry") {
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Identity(2, 2);
    const ManifoldMetric metric(sigma);
    std::mt19937_64 rng(34);

    const EmpiricalMeasure mu = random_measure(5, metric, rng);
    CHECK(w2_empirical(mu, mu).distance <= 1e-12);

    EmpiricalMeasure a, b;
    Eigen::VectorXd e1(2), e2(2);
    e1 << 1, 0;
    e2 << 0, 1;
    a.atoms.push_back({0.0, e1});
    b.atoms.push_back({1.0, e2});
    // ambient distance: sqrt(1 + |e1 - e2|^2) = sqrt(3)
    CHECK(w2_empirical(a, b).distance == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
    CHECK(w2_empirical(b, a).distance == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
}

TEST_CASE("w2_empirical matches brute force on small equal clouds") {
    Eigen::MatrixXd sigma(2, 2);
    sigma << 3, 1, 1, 2;
    const ManifoldMetric metric(sigma);
    std::mt19937_64 rng(35);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index m = 2 + static_cast<Eigen::Index>(rng() % 5);
        const EmpiricalMeasure mu = random_measure(m, metric, rng);
        const EmpiricalMeasure nu = random_measure(m, metric, rng);
        const W2Result got = w2_empirical(mu, nu);
        CHECK(got.distance == doctest::Approx(w2_brute_equal(mu, nu)).epsilon(1e-10));
        // coupling is a doubly stochastic plan with uniform marginals
        CHECK(got.plan.coupling.rows() == m);
        CHECK(got.plan.coupling.cols() == m);
        CHECK((got.plan.coupling.rowwise().sum().array() - 1.0 / static_cast<double>(m)).abs().maxCoeff() <= 1e-12);
        CHECK((got.plan.coupling.colwise().sum().array() - 1.0 / static_cast<double>(m)).abs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("w2_empirical: unequal cardinalities against the expanded brute force") {
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Identity(2, 2);
    const ManifoldMetric metric(sigma);
    std::mt19937_64 rng(36);
    for (int trial = 0; trial < 10; ++trial) {
        const EmpiricalMeasure mu = random_measure(2, metric, rng);
        const EmpiricalMeasure nu = random_measure(3, metric, rng);
        const W2Result got = w2_empirical(mu, nu);
        CHECK(got.distance == doctest::Approx(w2_brute_unequal(mu, nu)).epsilon(1e-10));
        CHECK((got.plan.coupling.rowwise().sum().array() - 0.5).abs().maxCoeff() <= 1e-12);
        CHECK((got.plan.coupling.colwise().sum().array() - 1.0 / 3.0).abs().maxCoeff() <= 1e-12);
    }

    // duplicating every atom leaves the measure, hence the distance, unchanged
    const EmpiricalMeasure mu = random_measure(3, metric, rng);
    EmpiricalMeasure doubled;
    for (const auto& atom : mu.atoms) {
        doubled.atoms.push_back(atom);
        doubled.atoms.push_back(atom);
    }
    CHECK(w2_empirical(mu, doubled).distance <= 1e-12);
}

TEST_CASE("w2_empirical satisfies the triangle inequality") {
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Identity(3, 3);
    const ManifoldMetric metric(sigma);
    std::mt19937_64 rng(37);
    for (int trial = 0; trial < 30; ++trial) {
        const EmpiricalMeasure a = random_measure(4, metric, rng);
        const EmpiricalMeasure b = random_measure(4, metric, rng);
        const EmpiricalMeasure c = random_measure(4, metric, rng);
        const double ab = w2_empirical(a, b).distance;
        const double bc = w2_empirical(b, c).distance;
        const double ac = w2_empirical(a, c).distance;
        CHECK(ac <= ab + bc + 1e-9);
    }
}

TEST_CASE("solve_assignment on a hand cost matrix") {
    Eigen::MatrixXd cost(3, 3);
    cost << 4, 1, 3, 2, 0, 5, 3, 2, 2;
    const std::vector<Eigen::Index> assign = solve_assignment(cost);
    // optimal: row0->col1 (1), row1->col0 (2), row2->col2 (2), total 5
    double total = 0.0;
    for (Eigen::Index i = 0; i < 3; ++i) total += cost(i, assign[static_cast<std::size_t>(i)]);
    CHECK(total == doctest::Approx(5.0));
}

TEST_CASE("speed_bound_audit along a short flow") {
    const DataDistribution dist = random_task(38);
    const ManifoldMetric metric(dist.sigma());
    std::mt19937_64 rng(39);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Ensemble e;
    e.mode = Mode::Manifold;
    e.act = Activation::leaky_relu(0.01);
    for (int k = 0; k < 8; ++k)
        e.neurons.push_back({gauss(rng), metric.normalize_to_omega(random_unit_vector(2, rng))});

    IntegrateOptions opts;
    opts.dt = 1e-2;
    opts.t_end = 1.0;
    opts.record_every = 10;
    const TrajectoryLog log = integrate(e, dist, metric, opts);

    double r0 = 0.0;
    for (const Neuron& n : e.neurons) r0 = std::max(r0, std::abs(n.a));
    const RegularityConstants consts =
        regularity_constants(dist, r0, e.act, e.loss);

    const SpeedBoundReport rep = speed_bound_audit(log, consts, r0);
    CHECK_FALSE(rep.violated);
    CHECK(rep.max_adot_observed <= consts.speed_bound(rep.r) + 1e-12);
    CHECK(rep.r >= r0);
    if (rep.r > r0)
        CHECK(rep.t_r_lower ==
              doctest::Approx((rep.r - r0) / (rep.speed_a + rep.speed_b * rep.r)).epsilon(1e-12));

    // reaching r = r0 takes no time at all
    const SpeedBoundReport at_start = speed_bound_audit(log, consts, rep.r);
    CHECK(at_start.t_r_lower == 0.0);
}

TEST_CASE("particle_limit_study produces one cell per width pair, time and seed") {
    const DataDistribution dist = random_task(40, 96);
    const ManifoldMetric metric(dist.sigma());

    ParticleLimitOptions opts;
    opts.m_list = {4, 8, 16};
    opts.t_grid = {0.0, 0.2};
    opts.seeds = {1, 2};
    opts.init_law = {7, true};
    opts.dt = 2e-2;

    const ConvergenceTable table = particle_limit_study(dist, metric, opts);
    CHECK(table.cells.size() == 2 * 2 * 2); // pairs x times x seeds
    for (const ConvergenceCell& cell : table.cells) {
        CHECK(cell.w2 >= 0.0);
        CHECK(cell.m_prime > cell.m);
        CHECK(std::isfinite(cell.w2));
    }
    CHECK(table.decreasing_fraction >= 0.0);
    CHECK(table.decreasing_fraction <= 1.0);
}
