#include "bnflow/data_model.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "bnflow/geometry.hpp"

namespace bnflow {

namespace {

Eigen::MatrixXd second_moment(const Eigen::MatrixXd& samples) {
    const double n = static_cast<double>(samples.rows());
    Eigen::MatrixXd sigma = (samples.transpose() * samples) / n;
    // symmetrize away the last-bit asymmetry of the matrix product
    return 0.5 * (sigma + sigma.transpose());
}

} // namespace

DataDistribution::DataDistribution(Eigen::MatrixXd samples, Eigen::VectorXd targets,
                                   double centering_tol, double pd_tol_rel)
    : samples_(std::move(samples)), targets_(std::move(targets)) {
    if (samples_.rows() == 0 || samples_.cols() == 0)
        throw std::invalid_argument("DataDistribution: empty sample set");
    if (targets_.size() != samples_.rows())
        throw std::invalid_argument("DataDistribution: targets/samples length mismatch");
    if (!samples_.allFinite() || !targets_.allFinite())
        throw std::invalid_argument("DataDistribution: non-finite entries");

    sigma_ = second_moment(samples_);

    const Eigen::VectorXd mean = samples_.colwise().mean();
    centered_ = mean.norm() <= centering_tol;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma_);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("DataDistribution: eigendecomposition of Sigma failed");
    lambda_min_ = es.eigenvalues().minCoeff();
    lambda_max_ = es.eigenvalues().maxCoeff();
    if (lambda_min_ <= pd_tol_rel * lambda_max_)
        throw std::invalid_argument(
            "DataDistribution: Sigma is not positive definite (lambda_min = " +
            std::to_string(lambda_min_) + "); Assumption 1 requires Sigma > 0");
}

DataDistribution DataDistribution::with_targets(Eigen::VectorXd targets) const {
    DataDistribution out = *this;
    if (targets.size() != samples_.rows())
        throw std::invalid_argument("with_targets: length mismatch");
    out.targets_ = std::move(targets);
    return out;
}

DataDistribution generate_gaussian(Eigen::Index d, Eigen::Index n,
                                   const Eigen::MatrixXd& sigma_spec, std::uint64_t seed) {
    if (sigma_spec.rows() != d || sigma_spec.cols() != d)
        throw std::invalid_argument("generate_gaussian: sigma_spec must be d x d");
    if ((sigma_spec - sigma_spec.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw std::invalid_argument("generate_gaussian: sigma_spec must be symmetric");
    if (n < d) throw std::invalid_argument("generate_gaussian: need n >= d");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma_spec);
    const double lmin = es.eigenvalues().minCoeff();
    if (lmin <= 0.0)
        throw std::invalid_argument("generate_gaussian: sigma_spec not PD, eigenvalue " +
                                    std::to_string(lmin));
    Eigen::LLT<Eigen::MatrixXd> llt(sigma_spec);
    const Eigen::MatrixXd chol = llt.matrixL();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd z(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) z(i, j) = gauss(rng);

    Eigen::MatrixXd samples = z * chol.transpose();
    samples.rowwise() -= samples.colwise().mean(); // exact recentering
    return DataDistribution(std::move(samples), Eigen::VectorXd::Zero(n));
}

DataDistribution load_csv(const std::string& path, CenterPolicy policy, double centering_tol) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_csv: cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();

    Eigen::Index d = -1;
    {
        std::stringstream header(line);
        std::string field;
        std::vector<std::string> names;
        while (std::getline(header, field, ',')) names.push_back(field);
        if (names.size() < 2 || names.back() != "y")
            throw std::runtime_error("load_csv: expected header x1,...,xd,y");
        d = static_cast<Eigen::Index>(names.size()) - 1;
    }

    std::vector<double> xs;
    std::vector<double> ys;
    Eigen::Index row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<double> vals;
        while (std::getline(ss, field, ',')) {
            try {
                std::size_t pos = 0;
                vals.push_back(std::stod(field, &pos));
                if (pos != field.size()) throw std::invalid_argument(field);
            } catch (const std::exception&) {
                throw std::runtime_error("load_csv: malformed value '" + field + "' at row " +
                                         std::to_string(row));
            }
        }
        if (static_cast<Eigen::Index>(vals.size()) != d + 1)
            throw std::runtime_error("load_csv: wrong field count at row " + std::to_string(row));
        xs.insert(xs.end(), vals.begin(), vals.end() - 1);
        ys.push_back(vals.back());
    }
    const Eigen::Index n = static_cast<Eigen::Index>(ys.size());
    if (n == 0) throw std::runtime_error("load_csv: no data rows in " + path);

    Eigen::MatrixXd samples(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) samples(i, j) = xs[i * d + j];
    Eigen::VectorXd targets = Eigen::Map<Eigen::VectorXd>(ys.data(), n);

    const Eigen::VectorXd mean = samples.colwise().mean();
    if (mean.norm() > centering_tol) {
        if (policy == CenterPolicy::Reject)
            throw std::runtime_error("load_csv: sample mean norm " + std::to_string(mean.norm()) +
                                     " violates the zero-mean assumption (Assumption 1); "
                                     "use the recenter policy to shift the data");
        samples.rowwise() -= mean.transpose();
    }
    return DataDistribution(std::move(samples), std::move(targets), centering_tol);
}

DataDistribution teacher_targets(const DataDistribution& dist, const TeacherSpec& spec,
                                 std::uint64_t seed) {
    for (const auto& neuron : spec.neurons)
        if (neuron.b.size() != dist.d())
            throw std::invalid_argument("teacher_targets: teacher neuron dimension mismatch");
    if (spec.noise_std < 0.0)
        throw std::invalid_argument("teacher_targets: negative noise_std");

    const Eigen::Index n = dist.n();
    Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
    const ManifoldMetric metric(dist.sigma());
    const double m_star = spec.neurons.empty() ? 1.0 : static_cast<double>(spec.neurons.size());
    for (const auto& neuron : spec.neurons) {
        const Eigen::VectorXd b_bar = metric.normalize_to_omega(neuron.b);
        const Eigen::VectorXd pre = dist.samples() * b_bar;
        for (Eigen::Index i = 0; i < n; ++i)
            y(i) += neuron.a * spec.act.value(pre(i)) / m_star;
    }
    if (spec.noise_std > 0.0) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> gauss(0.0, spec.noise_std);
        for (Eigen::Index i = 0; i < n; ++i) y(i) += gauss(rng);
    }
    if (!y.allFinite()) throw std::runtime_error("teacher_targets: non-finite teacher output");
    return dist.with_targets(std::move(y));
}

RegularityConstants regularity_constants(const DataDistribution& dist, double r,
                                         const Activation& act, const LossFn& loss) {
    RegularityConstants c;
    c.c_x = dist.samples().rowwise().norm().maxCoeff();
    c.l_sigma = act.lipschitz();
    c.l_lprime = loss.deriv_lipschitz();
    c.sigma0 = std::abs(act.at_zero());
    c.lprime0 = dist.targets().size() > 0 ? dist.targets().cwiseAbs().maxCoeff() : 0.0;
    c.c_b = 1.0 / std::sqrt(dist.sigma_lambda_min());

    // |a_dot| <= (|l'(0)| + L_l' |f|)(|sigma(0)| + L_sigma C_b C_x) with
    // |f| <= r (|sigma(0)| + L_sigma C_b C_x) on [-r, r] x Omega.
    const double s = c.sigma0 + c.l_sigma * c.c_b * c.c_x;
    c.speed_a = c.lprime0 * s;
    c.speed_b = c.l_lprime * s * s;
    (void)r;
    return c;
}

} // namespace bnflow
