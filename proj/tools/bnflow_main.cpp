#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <string>

#include "bnflow/experiments.hpp"
#include "bnflow/random.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitAssertionFailed = 1;
constexpr int kExitConfigError = 2;

bnflow::ExperimentConfig load_config(const std::string& config_path, const std::string& out_dir,
                                     std::optional<std::uint64_t> seed) {
    bnflow::ExperimentConfig config = config_path.empty()
                                          ? bnflow::ExperimentConfig::defaults()
                                          : bnflow::ExperimentConfig::from_json_file(config_path);
    if (!out_dir.empty()) config.out_dir = out_dir;
    if (seed) config.seed = *seed;
    return config;
}

int run_generate(const bnflow::ExperimentConfig& config) {
    bnflow::TeacherSpec teacher = bnflow::default_teacher(config);
    bnflow::DataDistribution dist =
        bnflow::generate_gaussian(config.d, config.n, config.sigma_spec, config.seed);
    dist = bnflow::teacher_targets(dist, teacher, config.seed + 1);

    std::filesystem::create_directories(config.out_dir);
    const std::string path = config.out_dir + "/data.csv";
    std::ofstream out(path);
    out << std::setprecision(17);
    for (Eigen::Index j = 1; j <= dist.d(); ++j) out << "x" << j << ',';
    out << "y\n";
    for (Eigen::Index i = 0; i < dist.n(); ++i) {
        for (Eigen::Index j = 0; j < dist.d(); ++j) out << dist.samples()(i, j) << ',';
        out << dist.targets()(i) << '\n';
    }
    std::cout << "wrote " << dist.n() << " samples to " << path << "\n";
    return kExitOk;
}

int run_simulate(const bnflow::ExperimentConfig& config) {
    bnflow::TeacherSpec teacher = bnflow::default_teacher(config);
    bnflow::DataDistribution dist =
        bnflow::generate_gaussian(config.d, config.n, config.sigma_spec, config.seed);
    dist = bnflow::teacher_targets(dist, teacher, config.seed + 1);
    const bnflow::ManifoldMetric metric(dist.sigma());

    std::mt19937_64 rng(config.seed + 2);
    std::uniform_int_distribution<int> coin(0, 1);
    bnflow::Ensemble ens;
    ens.act = config.act;
    ens.loss = config.loss_fn;
    for (Eigen::Index k = 0; k < config.m; ++k)
        ens.neurons.push_back(
            {coin(rng) == 1 ? -1.0 : 1.0, bnflow::random_unit_vector(config.d, rng)});

    bnflow::IntegrateOptions opts;
    opts.scheme = config.scheme;
    opts.dt = config.dt;
    opts.t_end = config.t_end;
    opts.retraction = config.retraction;
    const bnflow::TrajectoryLog log = bnflow::integrate(ens, dist, metric, opts);

    std::filesystem::create_directories(config.out_dir);
    bnflow::export_trajectory_csv(log, config.out_dir + "/trajectory.csv");
    std::cout << "integrated to t = " << log.times.back() << ", final loss " << log.losses.back()
              << ", trajectory in " << config.out_dir << "/trajectory.csv\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"bnflow: gradient-flow dynamics of two-layer networks with population batch "
                 "normalization"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    app.add_option("--config", config_path, "JSON config file (defaults used when omitted)");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--seed", seed, "override config seed");
    app.add_option("--jobs", jobs, "parallel seed repetitions (currently sequential)");

    auto* generate = app.add_subcommand("generate", "emit a data CSV for the configured task");
    auto* simulate = app.add_subcommand("simulate", "integrate the configured flow, export CSV");
    auto* verify = app.add_subcommand("verify", "run the full invariant suite");
    auto* fig1 = app.add_subcommand("fig1", "anisotropic speed experiment");
    auto* fig2 = app.add_subcommand("fig2", "magnitude-dependent speed experiment");
    auto* fig3 = app.add_subcommand("fig3", "first-step amplification experiment");
    auto* conv = app.add_subcommand("convergence", "particle-limit convergence study");
    // global options may appear after the subcommand name
    for (auto* sub : {generate, simulate, verify, fig1, fig2, fig3, conv}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfigError;
    }

    bnflow::ExperimentConfig config;
    try {
        config = load_config(config_path, out_dir, seed);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
    }

    try {
        if (generate->parsed()) return run_generate(config);
        if (simulate->parsed()) return run_simulate(config);
        if (verify->parsed()) {
            const bnflow::VerifyReport report = bnflow::run_verify(config);
            for (const auto& check : report.checks)
                std::cout << (check.passed ? "PASS" : "FAIL") << "  " << check.name
                          << "  measured=" << check.measured << " tol=" << check.tolerance
                          << "\n";
            return report.all_passed() ? kExitOk : kExitAssertionFailed;
        }
        if (fig1->parsed()) {
            const auto result = bnflow::run_fig1(config);
            std::cout << (result.passed ? "PASS" : "FAIL") << "  sector ratio (BN) "
                      << result.sector_ratio_bn << ", vanilla " << result.sector_ratio_vanilla
                      << (result.isotropic_control ? " [isotropic control]" : "") << "\n";
            return result.passed ? kExitOk : kExitAssertionFailed;
        }
        if (fig2->parsed()) {
            const auto result = bnflow::run_fig2(config);
            std::cout << (result.passed ? "PASS" : "FAIL") << "  first passage small "
                      << result.median_first_passage_small << " vs large "
                      << result.median_first_passage_large << ", t0 speed ratio "
                      << result.t0_speed_ratio << "\n";
            return result.passed ? kExitOk : kExitAssertionFailed;
        }
        if (fig3->parsed()) {
            const auto result = bnflow::run_fig3(config);
            std::cout << (result.passed ? "PASS" : "FAIL") << "  all_grew=" << result.all_grew
                      << " ordering_reversed=" << result.ordering_reversed
                      << " no_blowup=" << result.no_blowup << "\n";
            return result.passed ? kExitOk : kExitAssertionFailed;
        }
        if (conv->parsed()) {
            const auto result = bnflow::run_convergence_study(config);
            std::cout << (result.passed ? "PASS" : "FAIL") << "  decreasing fraction "
                      << result.table.decreasing_fraction << " over " << result.table.cells.size()
                      << " cells\n";
            return result.passed ? kExitOk : kExitAssertionFailed;
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitAssertionFailed;
    }
    return kExitConfigError;
}
