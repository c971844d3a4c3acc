// Acceptance suite: one line per criterion, exit 0 only if every criterion
// passes. Each check re-derives its expected values locally (finite
// differences, brute-force transport, closed-form identities) instead of
// trusting library internals.
#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "bnflow/data_model.hpp"
#include "bnflow/dynamics.hpp"
#include "bnflow/experiments.hpp"
#include "bnflow/geometry.hpp"
#include "bnflow/meanfield.hpp"
#include "bnflow/random.hpp"

using namespace bnflow;

namespace {

int g_failures = 0;

void report(int number, const std::string& name, bool passed, const std::string& detail) {
    std::printf("%s  criterion %2d  %-28s %s\n", passed ? "PASS" : "FAIL", number, name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!passed) ++g_failures;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3e", v);
    return buf;
}

DataDistribution random_task(Eigen::Index d, Eigen::Index n, std::mt19937_64& rng) {
    const Eigen::MatrixXd sigma = random_spd(d, 50.0, rng);
    DataDistribution dist = generate_gaussian(d, n, sigma, rng());
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd y(dist.n());
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = gauss(rng);
    return dist.with_targets(y);
}

Ensemble random_ensemble(Mode mode, Eigen::Index m, const ManifoldMetric& metric,
                         std::mt19937_64& rng, const Activation& act) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Ensemble e;
    e.mode = mode;
    e.act = act;
    for (Eigen::Index k = 0; k < m; ++k) {
        Eigen::VectorXd b = random_unit_vector(metric.dim(), rng) * (0.4 + 0.4 * (k % 4));
        if (mode == Mode::Manifold) b = metric.normalize_to_omega(b);
        e.neurons.push_back({gauss(rng), b});
    }
    return e;
}

// Central-difference gradient of the given loss functional in raw coordinates.
template <typename LossAt>
std::vector<Velocity> fd_negative_gradient(const Ensemble& e, LossAt&& loss_at, double h) {
    std::vector<Velocity> out(e.neurons.size());
    for (std::size_t k = 0; k < e.neurons.size(); ++k) {
        auto diff = [&](auto&& set) {
            Ensemble plus = e, minus = e;
            set(plus, h);
            set(minus, -h);
            return -(loss_at(plus) - loss_at(minus)) / (2 * h);
        };
        out[k].a_dot = diff([&](Ensemble& en, double eps) { en.neurons[k].a += eps; });
        out[k].b_dot.resize(e.dim());
        for (Eigen::Index j = 0; j < e.dim(); ++j)
            out[k].b_dot(j) =
                diff([&](Ensemble& en, double eps) { en.neurons[k].b(j) += eps; });
    }
    return out;
}

double rel_deviation(const std::vector<Velocity>& got, const std::vector<Velocity>& want) {
    double scale = 1e-12, dev = 0.0;
    for (std::size_t k = 0; k < got.size(); ++k)
        scale = std::max({scale, std::abs(want[k].a_dot), want[k].b_dot.cwiseAbs().maxCoeff()});
    for (std::size_t k = 0; k < got.size(); ++k) {
        dev = std::max(dev, std::abs(got[k].a_dot - want[k].a_dot));
        dev = std::max(dev, (got[k].b_dot - want[k].b_dot).cwiseAbs().maxCoeff());
    }
    return dev / scale;
}

// --- criterion 1: finite-difference gradient oracle ------------------------
void criterion_gradient_oracle() {
    std::mt19937_64 rng(101);
    const double h = 1e-5;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng() % 4);
        const Eigen::Index m = 1 + static_cast<Eigen::Index>(rng() % 8);
        const DataDistribution dist = random_task(d, 64, rng);
        const ManifoldMetric metric(dist.sigma());
        const Activation act = Activation::leaky_relu(0.01);

        for (Mode mode : {Mode::BnEuclidean, Mode::Vanilla}) {
            const Ensemble e = random_ensemble(mode, m, metric, rng, act);
            const std::vector<Velocity> fd = fd_negative_gradient(
                e, [&](const Ensemble& en) { return loss(en, dist, metric); }, h);
            worst = std::max(worst, rel_deviation(rhs(e, dist, metric), fd));
        }

        // Manifold mode: the manifold velocity is ||b||^2 (I - b b' Sigma)
        // applied to the raw-coordinate negative gradient of the same loss,
        // which the finite difference supplies independently.
        Ensemble mf = random_ensemble(Mode::Manifold, m, metric, rng, act);
        Ensemble raw = mf;
        raw.mode = Mode::BnEuclidean;
        std::vector<Velocity> fd = fd_negative_gradient(
            raw, [&](const Ensemble& en) { return loss(en, dist, metric); }, h);
        for (std::size_t k = 0; k < fd.size(); ++k) {
            const Eigen::VectorXd& b = mf.neurons[k].b;
            fd[k].b_dot = b.squaredNorm() *
                          (fd[k].b_dot - b * (metric.sigma() * b).dot(fd[k].b_dot));
        }
        worst = std::max(worst, rel_deviation(rhs(mf, dist, metric), fd));
    }
    report(1, "gradient oracle", worst <= 1e-5, "max rel dev " + fmt(worst) + " tol 1.0e-05");
}

// --- criterion 2: norm conservation ----------------------------------------
void criterion_norm_conservation() {
    std::mt19937_64 rng(102);
    const DataDistribution dist = random_task(3, 256, rng);
    const ManifoldMetric metric(dist.sigma());
    const Ensemble e =
        random_ensemble(Mode::BnEuclidean, 8, metric, rng, Activation::leaky_relu(0.01));

    IntegrateOptions opts;
    opts.scheme = Scheme::Rk4;
    opts.dt = 1e-3;
    opts.t_end = 10.0;
    opts.retraction = Retraction::None;
    opts.record_every = 1000;
    const TrajectoryLog log = integrate(e, dist, metric, opts);

    double drift = 0.0;
    for (const Ensemble& state : log.states)
        for (std::size_t k = 0; k < e.neurons.size(); ++k)
            drift = std::max(drift, std::abs(state.neurons[k].b.norm() - e.neurons[k].b.norm()) /
                                        e.neurons[k].b.norm());
    report(2, "norm conservation", drift <= 1e-6, "max drift " + fmt(drift) + " tol 1.0e-06");
}

// --- criterion 3: trajectory equivalence ------------------------------------
void criterion_equivalence() {
    std::mt19937_64 rng(103);
    const DataDistribution dist = random_task(3, 128, rng);
    const ManifoldMetric metric(dist.sigma());

    std::normal_distribution<double> gauss(0.0, 1.0);
    Ensemble init;
    init.mode = Mode::BnEuclidean;
    init.act = Activation::leaky_relu(0.01);
    for (int k = 0; k < 4; ++k) init.neurons.push_back({gauss(rng), random_unit_vector(3, rng)});

    auto dev = [&](const Ensemble& from, double dt) {
        const EquivalenceReport rep = equivalence_report(from, dist, metric, dt, 2.0);
        return std::max(rep.max_param_deviation, rep.max_loss_deviation);
    };

    const double dev_pinned = dev(init, 1e-4);
    const bool close = dev_pinned <= 1e-4;

    // The shrink-under-halving check measures the integrator's order, which
    // needs (i) a dt where discretization error clears the roundoff floor
    // (at dt = 1e-4 the deviation sits at ~1e-14) and (ii) a smooth RHS:
    // activation kinks cap RK4 at second order (ratio 4). So the order is
    // measured on the identity-activation flow at the coarsest resolvable dt.
    Ensemble smooth = init;
    smooth.act = Activation::identity();
    const double dev_c = dev(smooth, 1e-2);
    const double dev_f = dev(smooth, 0.5e-2);
    const double dt_ratio =
        dev_f > 0.0 ? dev_c / dev_f : std::numeric_limits<double>::infinity();
    const bool shrinks = dt_ratio >= 8.0;
    report(3, "trajectory equivalence", close && shrinks,
           "sup dev " + fmt(dev_pinned) + " tol 1.0e-04; halving ratio " + fmt(dt_ratio) +
               " (" + fmt(dev_c) + " -> " + fmt(dev_f) + ") need >= 8");
}

// --- criterion 4: metric suite ----------------------------------------------
void criterion_metric_suite() {
    std::mt19937_64 rng(104);
    std::uniform_real_distribution<double> log_cond(0.0, 3.0);
    double sym = 0.0, defining = 0.0;
    bool positive = true;
    for (int trial = 0; trial < 1000; ++trial) {
        const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng() % 4);
        const ManifoldMetric metric(random_spd(d, std::pow(10.0, log_cond(rng)), rng));
        const Eigen::VectorXd b = metric.normalize_to_omega(random_unit_vector(d, rng));
        const Eigen::MatrixXd g = metric.metric_matrix(b);
        sym = std::max(sym, (g - g.transpose()).cwiseAbs().maxCoeff() /
                                std::max(1.0, g.cwiseAbs().maxCoeff()));

        const Eigen::VectorXd alpha = random_tangent(metric.sigma(), b, rng);
        if (alpha.dot(g * alpha) <= 0.0) positive = false;

        std::normal_distribution<double> gauss(0.0, 1.0);
        Eigen::VectorXd grad(d);
        for (Eigen::Index j = 0; j < d; ++j) grad(j) = gauss(rng);
        const Eigen::VectorXd mg = metric.manifold_gradient(b, grad).vec;
        defining = std::max(defining,
                            (g * mg - metric.tangent_projection(b) * grad).norm() / grad.norm());
    }
    report(4, "metric suite", sym <= 1e-10 && positive && defining <= 1e-8,
           "symmetry " + fmt(sym) + " tol 1.0e-10; defining " + fmt(defining) +
               " tol 1.0e-08; positive " + (positive ? std::string("yes") : std::string("no")));
}

// --- criterion 5: scale law --------------------------------------------------
void criterion_scale_law() {
    std::mt19937_64 rng(105);
    const DataDistribution dist = random_task(3, 256, rng);
    const ManifoldMetric metric(dist.sigma());
    const Ensemble e = random_ensemble(Mode::BnEuclidean, 6, metric, rng, Activation::relu());
    const std::vector<Velocity> v1 = rhs(e, dist, metric);
    const Eigen::VectorXd f1 = forward(e, dist, metric);

    double vel_dev = 0.0, fwd_dev = 0.0;
    for (double c : {0.1, 2.0, 10.0}) {
        Ensemble scaled = e;
        for (Neuron& n : scaled.neurons) n.b *= c;
        const std::vector<Velocity> v2 = rhs(scaled, dist, metric);
        for (std::size_t k = 0; k < v1.size(); ++k)
            vel_dev = std::max(vel_dev, (v2[k].b_dot - v1[k].b_dot / c).norm() /
                                            std::max(1e-300, v1[k].b_dot.norm()));
        fwd_dev = std::max(fwd_dev, (forward(scaled, dist, metric) - f1).cwiseAbs().maxCoeff());
    }
    report(5, "scale law", vel_dev <= 1e-10 && fwd_dev <= 1e-12,
           "velocity dev " + fmt(vel_dev) + " tol 1.0e-10; forward dev " + fmt(fwd_dev) +
               " tol 1.0e-12");
}

// --- criterion 6: first-step amplification ----------------------------------
void criterion_first_step() {
    ExperimentConfig config = ExperimentConfig::defaults();
    config.n = 1024;
    const Fig3Result res = run_fig3(config);

    bool grew = res.all_grew;
    double tangency = 0.0, pyth = 0.0;
    for (const Fig3Result::Record& rec : res.records) {
        tangency = std::max(tangency, rec.tangency);
        pyth = std::max(pyth, rec.pythagoras_rel);
        if (rec.speed > 1e-15 && rec.post_norm <= rec.pre_norm) grew = false;
    }
    report(6, "first-step amplification",
           grew && tangency <= 1e-10 && pyth <= 1e-12 && res.passed,
           std::string("all grew ") + (grew ? "yes" : "no") + "; tangency " + fmt(tangency) +
               " tol 1.0e-10; pythagoras " + fmt(pyth) + " tol 1.0e-12");
}

// --- criterion 7: anisotropic speed profile ----------------------------------
void criterion_fig1() {
    ExperimentConfig config = ExperimentConfig::defaults();
    config.n = 2048;
    config.m = 64;
    config.iterations = 600;
    config.speed_iteration = 500;
    config.snapshot_iterations = {0, 500};
    config.out_dir = "acceptance_fig1";
    const Fig1Result aniso = run_fig1(config);

    ExperimentConfig iso = config;
    iso.sigma_spec = Eigen::MatrixXd::Identity(2, 2);
    iso.out_dir = "acceptance_fig1_iso";
    const Fig1Result flat = run_fig1(iso);

    const bool passed = aniso.sector_ratio_bn > 1.5 && flat.sector_ratio_bn >= 0.5 &&
                        flat.sector_ratio_bn <= 2.0;
    report(7, "anisotropic speed (fig1)", passed,
           "sector ratio " + fmt(aniso.sector_ratio_bn) + " need > 1.5; control " +
               fmt(flat.sector_ratio_bn) + " need in [0.5, 2]");
}

// --- criterion 8: init-scale groups ------------------------------------------
void criterion_fig2() {
    // Group size and lr are artifact choices (only the 10x scale ratio is
    // pinned); small groups with a larger step make the angular first passage
    // observable within the iteration budget.
    ExperimentConfig config = ExperimentConfig::defaults();
    config.n = 2048;
    config.m_per_group = 10;
    config.lr = 0.5;
    config.fig2_max_iterations = 4000;
    config.out_dir = "acceptance_fig2";
    const Fig2Result res = run_fig2(config);

    const bool earlier = res.median_first_passage_small < res.median_first_passage_large;
    const bool ratio_ok = std::abs(res.t0_speed_ratio / config.scale_ratio - 1.0) <= 0.1;
    report(8, "init-scale speed (fig2)", earlier && ratio_ok,
           "first passage " + fmt(res.median_first_passage_small) + " vs " +
               fmt(res.median_first_passage_large) + "; t0 speed ratio " +
               fmt(res.t0_speed_ratio) + " need within 10% of 10");
}

// --- criterion 9: speed bound and particle limit ------------------------------
void criterion_particle_limit() {
    std::mt19937_64 rng(109);
    bool audits_ok = true;
    double audit_margin = std::numeric_limits<double>::infinity();
    for (int trial = 0; trial < 3; ++trial) {
        const DataDistribution dist = random_task(2, 512, rng);
        const ManifoldMetric metric(dist.sigma());
        Ensemble e = random_ensemble(Mode::Manifold, 16, metric, rng, Activation::leaky_relu(0.01));

        IntegrateOptions opts;
        opts.dt = 1e-2;
        opts.t_end = 1.0;
        opts.record_every = 5;
        const TrajectoryLog log = integrate(e, dist, metric, opts);

        double r0 = 0.0;
        for (const Neuron& n : e.neurons) r0 = std::max(r0, std::abs(n.a));
        const RegularityConstants consts = regularity_constants(dist, r0, e.act, e.loss);
        const SpeedBoundReport rep = speed_bound_audit(log, consts, r0);
        if (rep.violated) audits_ok = false;
        audit_margin = std::min(audit_margin,
                                consts.speed_bound(rep.r) - rep.max_adot_observed);
    }

    ExperimentConfig config = ExperimentConfig::defaults();
    config.n = 1024;
    config.out_dir = "acceptance_convergence";
    const ConvergenceResult conv = run_convergence_study(config);

    report(9, "speed bound + particle limit",
           audits_ok && conv.table.decreasing_fraction > 0.8,
           std::string("audits ") + (audits_ok ? "clean" : "VIOLATED") + " (margin " +
               fmt(audit_margin) + "); W2 decreasing fraction " +
               fmt(conv.table.decreasing_fraction) + " need > 0.8");
}

// --- criterion 10: optimal transport -----------------------------------------
void criterion_ot() {
    std::mt19937_64 rng(110);
    double agree = 0.0, axioms = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng() % 2);
        const ManifoldMetric metric(random_spd(d, 10.0, rng));
        const Eigen::Index m = 2 + static_cast<Eigen::Index>(rng() % 5);

        auto cloud = [&](Eigen::Index sz) {
            std::normal_distribution<double> gauss(0.0, 1.0);
            EmpiricalMeasure mu;
            for (Eigen::Index k = 0; k < sz; ++k)
                mu.atoms.push_back(
                    {gauss(rng), metric.normalize_to_omega(random_unit_vector(d, rng))});
            return mu;
        };
        const EmpiricalMeasure a = cloud(m), b = cloud(m), c = cloud(m);

        // brute-force permutation minimum
        std::vector<Eigen::Index> perm(static_cast<std::size_t>(m));
        std::iota(perm.begin(), perm.end(), 0);
        double best = std::numeric_limits<double>::infinity();
        do {
            double cost = 0.0;
            for (Eigen::Index i = 0; i < m; ++i)
                cost += (a.ambient(i) - b.ambient(perm[static_cast<std::size_t>(i)])).squaredNorm();
            best = std::min(best, cost / static_cast<double>(m));
        } while (std::next_permutation(perm.begin(), perm.end()));

        const double ab = w2_empirical(a, b).distance;
        agree = std::max(agree, std::abs(ab - std::sqrt(best)));

        const double ba = w2_empirical(b, a).distance;
        const double bc = w2_empirical(b, c).distance;
        const double ac = w2_empirical(a, c).distance;
        axioms = std::max(axioms, std::abs(ab - ba));              // symmetry
        axioms = std::max(axioms, w2_empirical(a, a).distance);    // identity
        axioms = std::max(axioms, std::max(0.0, ac - (ab + bc)));  // triangle
    }
    report(10, "optimal transport", agree <= 1e-12 && axioms <= 1e-9,
           "brute-force dev " + fmt(agree) + " tol 1.0e-12; axiom dev " + fmt(axioms) +
               " tol 1.0e-09");
}

// --- criterion 11: regular-point identity -------------------------------------
void criterion_regular_point() {
    std::mt19937_64 rng(111);
    double identity_dev = 0.0;
    bool nonzero_ok = true;
    for (int trial = 0; trial < 1000; ++trial) {
        const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng() % 4);
        const ManifoldMetric metric(random_spd(d, 100.0, rng));
        const Eigen::VectorXd b = metric.normalize_to_omega(random_unit_vector(d, rng));
        const Eigen::VectorXd v = random_tangent(metric.sigma(), b, rng);

        const double quad = v.squaredNorm() - v.dot(metric.sigma() * b) * b.dot(v);
        identity_dev = std::max(identity_dev, std::abs(quad / v.squaredNorm() - 1.0));

        const RegularPointResult rp = regular_point_check({b, v}, metric);
        identity_dev = std::max(identity_dev, std::abs(rp.quadratic_form / v.squaredNorm() - 1.0));
        if (!rp.is_regular || metric.manifold_gradient(b, v).vec.norm() == 0.0) nonzero_ok = false;
    }
    report(11, "regular-point identity", identity_dev <= 1e-10 && nonzero_ok,
           "identity dev " + fmt(identity_dev) + " tol 1.0e-10; nonzero gradients " +
               (nonzero_ok ? "yes" : "no"));
}

} // namespace

int main() {
    struct Timed {
        int number;
        void (*fn)();
    };
    const Timed checks[] = {
        {1, criterion_gradient_oracle}, {2, criterion_norm_conservation},
        {3, criterion_equivalence},     {4, criterion_metric_suite},
        {5, criterion_scale_law},       {6, criterion_first_step},
        {7, criterion_fig1},            {8, criterion_fig2},
        {9, criterion_particle_limit},  {10, criterion_ot},
        {11, criterion_regular_point},
    };
    for (const Timed& check : checks) {
        const auto start = std::chrono::steady_clock::now();
        check.fn();
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("      criterion %2d  runtime %.1fs\n", check.number, secs);
        std::fflush(stdout);
    }
    if (g_failures > 0) {
        std::printf("%d criterio%s failed\n", g_failures, g_failures == 1 ? "n" : "ns");
        return 1;
    }
    std::printf("all 11 criteria passed\n");
    return 0;
}
