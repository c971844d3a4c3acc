#include "bnflow/dynamics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace bnflow {

namespace {

constexpr double kMinBnNorm = 1e-12;

Eigen::VectorXd direction(const Neuron& neuron, Mode mode, const ManifoldMetric& metric) {
    switch (mode) {
    case Mode::BnEuclidean: return metric.normalize_to_omega(neuron.b);
    case Mode::Manifold: return neuron.b;
    case Mode::Vanilla: return neuron.b;
    }
    return neuron.b;
}

void check_finite(const Ensemble& ensemble, std::size_t step) {
    for (const auto& neuron : ensemble.neurons)
        if (!std::isfinite(neuron.a) || !neuron.b.allFinite())
            throw std::runtime_error("integrate: non-finite state at step " +
                                     std::to_string(step));
}

Ensemble stepped(const Ensemble& base, const std::vector<Velocity>& vel, double h) {
    Ensemble out = base;
    for (std::size_t k = 0; k < out.neurons.size(); ++k) {
        out.neurons[k].a += h * vel[k].a_dot;
        out.neurons[k].b += h * vel[k].b_dot;
    }
    return out;
}

std::vector<Velocity> combine_rk4(const std::vector<Velocity>& k1, const std::vector<Velocity>& k2,
                                  const std::vector<Velocity>& k3,
                                  const std::vector<Velocity>& k4) {
    std::vector<Velocity> out(k1.size());
    for (std::size_t k = 0; k < k1.size(); ++k) {
        out[k].a_dot = (k1[k].a_dot + 2.0 * k2[k].a_dot + 2.0 * k3[k].a_dot + k4[k].a_dot) / 6.0;
        out[k].b_dot =
            (k1[k].b_dot + 2.0 * k2[k].b_dot + 2.0 * k3[k].b_dot + k4[k].b_dot) / 6.0;
    }
    return out;
}

} // namespace

void validate(const Ensemble& ensemble, const ManifoldMetric& metric) {
    if (ensemble.neurons.empty()) throw std::invalid_argument("Ensemble: need m >= 1");
    for (const auto& neuron : ensemble.neurons) {
        if (neuron.b.size() != metric.dim())
            throw std::invalid_argument("Ensemble: neuron dimension mismatch");
        if (ensemble.mode != Mode::Vanilla && neuron.b.norm() < kMinBnNorm)
            throw std::invalid_argument(
                "Ensemble: ||b|| below 1e-12, batch normalization is singular at b = 0");
        // Coarse sanity boundary only: the manifold RHS re-projects its
        // argument, so O(dt^2) integrator stage drift is harmless.
        if (ensemble.mode == Mode::Manifold && !metric.on_omega(neuron.b, 1e-3))
            throw std::invalid_argument("Ensemble: manifold mode requires every b on Omega");
    }
}

Eigen::VectorXd forward(const Ensemble& ensemble, const DataDistribution& dist,
                        const ManifoldMetric& metric) {
    if (ensemble.dim() != dist.d())
        throw std::invalid_argument("forward: ensemble/data dimension mismatch");
    const double m = static_cast<double>(ensemble.width());
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dist.n());
    for (const auto& neuron : ensemble.neurons) {
        const Eigen::VectorXd pre = dist.samples() * direction(neuron, ensemble.mode, metric);
        for (Eigen::Index i = 0; i < pre.size(); ++i)
            out(i) += neuron.a * ensemble.act.value(pre(i));
    }
    return out / m;
}

double loss(const Ensemble& ensemble, const DataDistribution& dist,
            const ManifoldMetric& metric) {
    const Eigen::VectorXd f = forward(ensemble, dist, metric);
    double acc = 0.0;
    for (Eigen::Index i = 0; i < f.size(); ++i)
        acc += ensemble.loss.value(f(i), dist.targets()(i));
    return acc / static_cast<double>(dist.n());
}

Eigen::VectorXd residuals(const Ensemble& ensemble, const DataDistribution& dist,
                          const ManifoldMetric& metric) {
    const Eigen::VectorXd f = forward(ensemble, dist, metric);
    Eigen::VectorXd r(f.size());
    for (Eigen::Index i = 0; i < f.size(); ++i)
        r(i) = ensemble.loss.deriv(f(i), dist.targets()(i));
    return r;
}

std::vector<Velocity> rhs_bn_euclidean(const Ensemble& ensemble, const DataDistribution& dist,
                                       const ManifoldMetric& metric) {
    if (ensemble.mode != Mode::BnEuclidean)
        throw std::invalid_argument("rhs_bn_euclidean: wrong mode");
    validate(ensemble, metric);
    const Eigen::VectorXd r = residuals(ensemble, dist, metric);
    const double n = static_cast<double>(dist.n());
    const double m = static_cast<double>(ensemble.width());

    std::vector<Velocity> out(ensemble.neurons.size());
    for (std::size_t k = 0; k < ensemble.neurons.size(); ++k) {
        const Neuron& neuron = ensemble.neurons[k];
        const double s = metric.sigma_norm(neuron.b);
        const Eigen::VectorXd b_bar = neuron.b / s;
        const Eigen::VectorXd pre = dist.samples() * b_bar;

        double a_grad = 0.0;
        Eigen::VectorXd weights(pre.size());
        for (Eigen::Index i = 0; i < pre.size(); ++i) {
            a_grad += r(i) * ensemble.act.value(pre(i));
            weights(i) = r(i) * ensemble.act.deriv(pre(i));
        }
        // E[ l' sigma'(b_bar'x) x ]
        const Eigen::VectorXd e = dist.samples().transpose() * weights / n;

        const Eigen::VectorXd sb = metric.sigma() * neuron.b;
        out[k].a_dot = -a_grad / (n * m);
        // -(a/m) (1/s) (I - Sigma b b'/s^2) e; exactly orthogonal to b
        out[k].b_dot = -(neuron.a / (m * s)) * (e - sb * (neuron.b.dot(e) / (s * s)));
    }
    return out;
}

std::vector<Velocity> rhs_manifold(const Ensemble& ensemble, const DataDistribution& dist,
                                   const ManifoldMetric& metric) {
    if (ensemble.mode != Mode::Manifold)
        throw std::invalid_argument("rhs_manifold: wrong mode");
    validate(ensemble, metric);
    const Eigen::VectorXd r = residuals(ensemble, dist, metric);
    const double n = static_cast<double>(dist.n());
    const double m = static_cast<double>(ensemble.width());

    std::vector<Velocity> out(ensemble.neurons.size());
    for (std::size_t k = 0; k < ensemble.neurons.size(); ++k) {
        const Neuron& neuron = ensemble.neurons[k];
        // The field is only defined on Omega; extend it off-manifold along
        // rays so RK4 stage states (which drift at O(dt^2)) evaluate cleanly.
        const Eigen::VectorXd b_bar = metric.normalize_to_omega(neuron.b);
        const Eigen::VectorXd pre = dist.samples() * b_bar;

        double a_grad = 0.0;
        Eigen::VectorXd weights(pre.size());
        for (Eigen::Index i = 0; i < pre.size(); ++i) {
            a_grad += r(i) * ensemble.act.value(pre(i));
            weights(i) = r(i) * ensemble.act.deriv(pre(i));
        }
        const Eigen::VectorXd e = dist.samples().transpose() * weights / n;

        out[k].a_dot = -a_grad / (n * m);
        out[k].b_dot = -metric.manifold_gradient(b_bar, (neuron.a / m) * e).vec;
    }
    return out;
}

std::vector<Velocity> rhs_vanilla(const Ensemble& ensemble, const DataDistribution& dist) {
    if (ensemble.mode != Mode::Vanilla)
        throw std::invalid_argument("rhs_vanilla: wrong mode");
    const ManifoldMetric metric(dist.sigma());
    validate(ensemble, metric);
    const Eigen::VectorXd r = residuals(ensemble, dist, metric);
    const double n = static_cast<double>(dist.n());
    const double m = static_cast<double>(ensemble.width());

    std::vector<Velocity> out(ensemble.neurons.size());
    for (std::size_t k = 0; k < ensemble.neurons.size(); ++k) {
        const Neuron& neuron = ensemble.neurons[k];
        const Eigen::VectorXd pre = dist.samples() * neuron.b;

        double a_grad = 0.0;
        Eigen::VectorXd weights(pre.size());
        for (Eigen::Index i = 0; i < pre.size(); ++i) {
            a_grad += r(i) * ensemble.act.value(pre(i));
            weights(i) = r(i) * ensemble.act.deriv(pre(i));
        }
        out[k].a_dot = -a_grad / (n * m);
        out[k].b_dot = -(neuron.a / m) * (dist.samples().transpose() * weights / n);
    }
    return out;
}

std::vector<Velocity> rhs(const Ensemble& ensemble, const DataDistribution& dist,
                          const ManifoldMetric& metric) {
    switch (ensemble.mode) {
    case Mode::BnEuclidean: return rhs_bn_euclidean(ensemble, dist, metric);
    case Mode::Manifold: return rhs_manifold(ensemble, dist, metric);
    case Mode::Vanilla: return rhs_vanilla(ensemble, dist);
    }
    throw std::logic_error("rhs: unknown mode");
}

TrajectoryLog integrate(const Ensemble& init, const DataDistribution& dist,
                        const ManifoldMetric& metric, const IntegrateOptions& opts) {
    if (opts.dt <= 0.0 || opts.t_end < opts.dt)
        throw std::invalid_argument("integrate: need dt > 0 and t_end >= dt");
    validate(init, metric);

    std::vector<double> init_norms;
    for (const auto& neuron : init.neurons) init_norms.push_back(neuron.b.norm());

    const auto n_steps = static_cast<std::size_t>(std::llround(opts.t_end / opts.dt));
    TrajectoryLog log;
    Ensemble state = init;

    auto record = [&](double t) {
        log.times.push_back(t);
        log.states.push_back(state);
        log.losses.push_back(loss(state, dist, metric));
        log.velocities.push_back(rhs(state, dist, metric));
    };

    record(0.0);
    for (std::size_t step = 1; step <= n_steps; ++step) {
        if (opts.scheme == Scheme::Euler) {
            state = stepped(state, rhs(state, dist, metric), opts.dt);
        } else {
            const auto k1 = rhs(state, dist, metric);
            const auto k2 = rhs(stepped(state, k1, 0.5 * opts.dt), dist, metric);
            const auto k3 = rhs(stepped(state, k2, 0.5 * opts.dt), dist, metric);
            const auto k4 = rhs(stepped(state, k3, opts.dt), dist, metric);
            state = stepped(state, combine_rk4(k1, k2, k3, k4), opts.dt);
        }
        check_finite(state, step);

        if (opts.retraction == Retraction::Renormalize) {
            for (std::size_t k = 0; k < state.neurons.size(); ++k) {
                Eigen::VectorXd& b = state.neurons[k].b;
                if (state.mode == Mode::BnEuclidean)
                    b *= init_norms[k] / b.norm();
                else if (state.mode == Mode::Manifold)
                    b = metric.normalize_to_omega(b);
            }
        }
        if (step % opts.record_every == 0 || step == n_steps)
            record(static_cast<double>(step) * opts.dt);
    }
    return log;
}

Ensemble gd_step(const Ensemble& ensemble, const DataDistribution& dist,
                 const ManifoldMetric& metric, double lr) {
    if (lr <= 0.0) throw std::invalid_argument("gd_step: need lr > 0");
    if (ensemble.mode != Mode::BnEuclidean)
        throw std::invalid_argument("gd_step: BN-Euclidean mode only");
    return stepped(ensemble, rhs_bn_euclidean(ensemble, dist, metric), lr);
}

EquivalenceReport equivalence_report(const Ensemble& init, const DataDistribution& dist,
                                     const ManifoldMetric& metric, double dt, double t_end,
                                     Scheme scheme) {
    if (init.mode != Mode::BnEuclidean)
        throw std::invalid_argument("equivalence_report: init must be in BN-Euclidean mode");

    IntegrateOptions opts;
    opts.scheme = scheme;
    opts.dt = dt;
    opts.t_end = t_end;
    opts.retraction = Retraction::None;

    const TrajectoryLog bn_log = integrate(init, dist, metric, opts);

    Ensemble mapped_init = init;
    mapped_init.mode = Mode::Manifold;
    for (auto& neuron : mapped_init.neurons) neuron.b = metric.normalize_to_omega(neuron.b);
    const TrajectoryLog mani_log = integrate(mapped_init, dist, metric, opts);

    EquivalenceReport report;
    for (std::size_t t = 0; t < bn_log.size(); ++t) {
        const Ensemble& bn = bn_log.states[t];
        const Ensemble& mani = mani_log.states[t];
        for (Eigen::Index k = 0; k < bn.width(); ++k) {
            const Eigen::VectorXd b_bar = metric.normalize_to_omega(bn.neurons[k].b);
            const double da = std::abs(bn.neurons[k].a - mani.neurons[k].a);
            const double db = (b_bar - mani.neurons[k].b).norm();
            report.max_param_deviation = std::max({report.max_param_deviation, da, db});
        }
        report.max_loss_deviation =
            std::max(report.max_loss_deviation, std::abs(bn_log.losses[t] - mani_log.losses[t]));
    }
    return report;
}

void export_trajectory_csv(const TrajectoryLog& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("export_trajectory_csv: cannot open " + path);
    if (log.states.empty()) throw std::invalid_argument("export_trajectory_csv: empty log");

    const Eigen::Index d = log.states.front().dim();
    out << "t,k,a";
    for (Eigen::Index j = 1; j <= d; ++j) out << ",b_" << j;
    out << ",adot";
    for (Eigen::Index j = 1; j <= d; ++j) out << ",bdot_" << j;
    out << ",loss\n";
    out << std::setprecision(17);
    for (std::size_t t = 0; t < log.size(); ++t) {
        for (Eigen::Index k = 0; k < log.states[t].width(); ++k) {
            const Neuron& neuron = log.states[t].neurons[k];
            const Velocity& vel = log.velocities[t][k];
            out << log.times[t] << ',' << k << ',' << neuron.a;
            for (Eigen::Index j = 0; j < d; ++j) out << ',' << neuron.b(j);
            out << ',' << vel.a_dot;
            for (Eigen::Index j = 0; j < d; ++j) out << ',' << vel.b_dot(j);
            out << ',' << log.losses[t] << '\n';
        }
    }
}

} // namespace bnflow
