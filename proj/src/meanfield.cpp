#include "bnflow/meanfield.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace bnflow {

namespace {

// Expanded assignment problems beyond this size are refused; desk-scale
// widths are a few thousand at most.
constexpr Eigen::Index kMaxAssignmentSize = 4096;

Ensemble measure_to_ensemble(const EmpiricalMeasure& measure, const Ensemble& like) {
    Ensemble ens;
    ens.mode = Mode::Manifold;
    ens.act = like.act;
    ens.loss = like.loss;
    ens.neurons.reserve(measure.atoms.size());
    for (const auto& atom : measure.atoms) ens.neurons.push_back({atom.a, atom.b_bar});
    return ens;
}

EmpiricalMeasure sample_init(Eigen::Index m, Eigen::Index d, const InitLaw& law,
                             const ManifoldMetric& metric) {
    EmpiricalMeasure measure;
    measure.atoms.reserve(m);
    std::mt19937_64 shared_rng(law.seed);
    for (Eigen::Index k = 0; k < m; ++k) {
        // Paired clouds draw each atom from its own stream keyed by (seed,
        // atom index), so a width-m cloud is a prefix of any wider one.
        std::mt19937_64 atom_rng(law.seed ^ (0x9e3779b97f4a7c15ULL * (k + 1)));
        std::mt19937_64& rng = law.paired ? atom_rng : shared_rng;
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::uniform_int_distribution<int> coin(0, 1);

        EmpiricalMeasure::Atom atom;
        atom.a = coin(rng) == 0 ? -1.0 : 1.0;
        Eigen::VectorXd b(d);
        do {
            for (Eigen::Index j = 0; j < d; ++j) b(j) = gauss(rng);
        } while (b.norm() < 1e-8);
        atom.b_bar = metric.normalize_to_omega(b);
        measure.atoms.push_back(std::move(atom));
    }
    return measure;
}

} // namespace

Eigen::VectorXd EmpiricalMeasure::ambient(Eigen::Index k) const {
    const Atom& atom = atoms[static_cast<std::size_t>(k)];
    Eigen::VectorXd p(atom.b_bar.size() + 1);
    p(0) = atom.a;
    p.tail(atom.b_bar.size()) = atom.b_bar;
    return p;
}

EmpiricalMeasure pushforward(const Ensemble& ensemble, const ManifoldMetric& metric) {
    EmpiricalMeasure measure;
    measure.atoms.reserve(ensemble.neurons.size());
    for (const auto& neuron : ensemble.neurons)
        measure.atoms.push_back({neuron.a, metric.normalize_to_omega(neuron.b)});
    return measure;
}

std::vector<Velocity> velocity_field(const EmpiricalMeasure& measure, const Ensemble& like,
                                     const DataDistribution& dist,
                                     const ManifoldMetric& metric) {
    const Ensemble ens = measure_to_ensemble(measure, like);
    std::vector<Velocity> vel = rhs_manifold(ens, dist, metric);
    const double m = static_cast<double>(measure.size());
    for (auto& v : vel) {
        v.a_dot *= m;
        v.b_dot *= m;
    }
    return vel;
}

std::vector<Eigen::Index> solve_assignment(const Eigen::MatrixXd& cost) {
    if (cost.rows() != cost.cols() || cost.rows() == 0)
        throw std::invalid_argument("solve_assignment: cost matrix must be square, non-empty");
    const Eigen::Index n = cost.rows();
    constexpr double inf = std::numeric_limits<double>::infinity();

    // Jonker-Volgenant style shortest augmenting paths with potentials;
    // column 0 is a virtual unmatched slot.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<Eigen::Index> match(n + 1, 0), way(n + 1, 0);
    for (Eigen::Index i = 1; i <= n; ++i) {
        match[0] = i;
        Eigen::Index j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const Eigen::Index i0 = match[j0];
            double delta = inf;
            Eigen::Index j1 = 0;
            for (Eigen::Index j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (Eigen::Index j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const Eigen::Index j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<Eigen::Index> row_to_col(n);
    for (Eigen::Index j = 1; j <= n; ++j) row_to_col[match[j] - 1] = j - 1;
    return row_to_col;
}

W2Result w2_empirical(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    if (mu.size() == 0 || nu.size() == 0)
        throw std::invalid_argument("w2_empirical: empty measure");

    const Eigen::Index m1 = mu.size();
    const Eigen::Index m2 = nu.size();
    const Eigen::Index lcm = std::lcm(m1, m2);
    if (lcm > kMaxAssignmentSize)
        throw std::invalid_argument("w2_empirical: expanded problem size " +
                                    std::to_string(lcm) + " exceeds the supported limit");
    const Eigen::Index rep1 = lcm / m1;
    const Eigen::Index rep2 = lcm / m2;

    Eigen::MatrixXd cost(lcm, lcm);
    for (Eigen::Index i = 0; i < lcm; ++i) {
        const Eigen::VectorXd pi = mu.ambient(i / rep1);
        for (Eigen::Index j = 0; j < lcm; ++j)
            cost(i, j) = (pi - nu.ambient(j / rep2)).squaredNorm();
    }
    const std::vector<Eigen::Index> assign = solve_assignment(cost);

    W2Result out;
    out.plan.coupling = Eigen::MatrixXd::Zero(m1, m2);
    double total = 0.0;
    for (Eigen::Index i = 0; i < lcm; ++i) {
        total += cost(i, assign[i]);
        out.plan.coupling(i / rep1, assign[i] / rep2) += 1.0 / static_cast<double>(lcm);
    }
    out.plan.cost = total / static_cast<double>(lcm);
    out.distance = std::sqrt(out.plan.cost);
    return out;
}

SpeedBoundReport speed_bound_audit(const TrajectoryLog& log, const RegularityConstants& consts,
                                   double r0) {
    if (log.states.empty()) throw std::invalid_argument("speed_bound_audit: empty trajectory");
    SpeedBoundReport report;
    report.speed_a = consts.speed_a;
    report.speed_b = consts.speed_b;

    double max_a = 0.0;
    for (const auto& state : log.states)
        for (const auto& neuron : state.neurons) max_a = std::max(max_a, std::abs(neuron.a));
    report.r = std::max(r0, max_a);

    for (const auto& step : log.velocities)
        for (const auto& vel : step)
            report.max_adot_observed = std::max(report.max_adot_observed, std::abs(vel.a_dot));

    const double bound = consts.speed_bound(report.r);
    report.violated = report.max_adot_observed > bound;
    report.t_r_lower = report.r > r0 ? (report.r - r0) / bound : 0.0;
    return report;
}

ConvergenceTable particle_limit_study(const DataDistribution& dist, const ManifoldMetric& metric,
                                      const ParticleLimitOptions& opts) {
    if (opts.m_list.size() < 2)
        throw std::invalid_argument("particle_limit_study: need at least two widths");
    if (!std::is_sorted(opts.m_list.begin(), opts.m_list.end()))
        throw std::invalid_argument("particle_limit_study: m_list must be increasing");
    if (opts.t_grid.empty() || opts.seeds.empty())
        throw std::invalid_argument("particle_limit_study: empty t_grid or seed list");

    const double t_max = *std::max_element(opts.t_grid.begin(), opts.t_grid.end());
    ConvergenceTable table;

    for (const std::uint64_t seed : opts.seeds) {
        // measures[w][t_idx] = empirical measure of width m_list[w] at t_grid[t_idx]
        std::vector<std::vector<EmpiricalMeasure>> measures;
        for (const Eigen::Index m : opts.m_list) {
            InitLaw law = opts.init_law;
            law.seed = opts.init_law.seed ^ seed;
            if (!law.paired) // independent clouds per width
                law.seed ^= static_cast<std::uint64_t>(m) * 0xd1342543de82ef95ULL;

            Ensemble like;
            like.act = opts.act;
            like.loss = opts.loss_fn;
            Ensemble init = measure_to_ensemble(sample_init(m, dist.d(), law, metric), like);

            // t_grid is mean-field time: per-particle velocities carry no 1/m,
            // so the finite-m flow must be sped up by m to land every width on
            // the same measure-level clock.
            IntegrateOptions iopts;
            iopts.dt = opts.dt * static_cast<double>(m);
            iopts.t_end = std::max(t_max, opts.dt) * static_cast<double>(m);
            iopts.retraction = Retraction::Renormalize;
            const TrajectoryLog log = integrate(init, dist, metric, iopts);

            std::vector<EmpiricalMeasure> snaps;
            for (const double t : opts.t_grid) {
                const auto idx = static_cast<std::size_t>(std::llround(t / opts.dt));
                if (idx >= log.size())
                    throw std::logic_error("particle_limit_study: time index out of range");
                snaps.push_back(pushforward(log.states[idx], metric));
            }
            measures.push_back(std::move(snaps));
        }

        for (std::size_t w = 0; w + 1 < measures.size(); ++w) {
            for (std::size_t ti = 0; ti < opts.t_grid.size(); ++ti) {
                ConvergenceCell cell;
                cell.m = opts.m_list[w];
                cell.m_prime = opts.m_list[w + 1];
                cell.t = opts.t_grid[ti];
                cell.seed = seed;
                cell.w2 = w2_empirical(measures[w][ti], measures[w + 1][ti]).distance;
                table.cells.push_back(cell);
            }
        }
    }

    // Trend per (m, t) cell with seeds as replicates: the seed-median distance
    // must drop when m quadruples.
    auto median_w2 = [&](Eigen::Index m, double t) {
        std::vector<double> vals;
        for (const auto& cell : table.cells)
            if (cell.m == m && cell.t == t) vals.push_back(cell.w2);
        std::sort(vals.begin(), vals.end());
        const std::size_t h = vals.size() / 2;
        return vals.size() % 2 == 1 ? vals[h] : 0.5 * (vals[h - 1] + vals[h]);
    };
    std::size_t comparisons = 0;
    std::size_t decreasing = 0;
    for (std::size_t w = 0; w + 2 < opts.m_list.size(); ++w) {
        for (const double t : opts.t_grid) {
            ++comparisons;
            if (median_w2(opts.m_list[w + 1], t) < median_w2(opts.m_list[w], t)) ++decreasing;
        }
    }
    table.decreasing_fraction =
        comparisons == 0 ? 0.0 : static_cast<double>(decreasing) / static_cast<double>(comparisons);
    return table;
}

} // namespace bnflow
