#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bnflow/data_model.hpp"
#include "bnflow/dynamics.hpp"
#include "bnflow/meanfield.hpp"

namespace bnflow {

/// Config for the experiment runner. Defaults reproduce the reference runs;
/// every field can be overridden from a JSON config file. The figure
/// experiments leave m, learning rate and task unspecified upstream, so the
/// defaults here are artifact choices.
struct ExperimentConfig {
    // data
    Eigen::Index d = 2;
    Eigen::Index n = 4096;
    Eigen::MatrixXd sigma_spec; // defaults to diag(5, 1) in d = 2
    std::uint64_t seed = 7;

    // teacher task
    int teacher_neurons = 3;
    double teacher_noise = 0.0;
    Activation teacher_act = Activation::relu();

    // student ensemble
    Eigen::Index m = 100;
    Activation act = Activation::relu();
    LossFn loss_fn;

    // discrete gradient descent
    double lr = 0.05;
    long iterations = 8000;
    long speed_iteration = 500;
    std::vector<long> snapshot_iterations = {0, 2000, 4000, 6000, 8000};

    // continuous flow
    Scheme scheme = Scheme::Rk4;
    double dt = 1e-3;
    double t_end = 1.0;
    Retraction retraction = Retraction::Renormalize;

    // fig2
    Eigen::Index m_per_group = 50;
    double scale_ratio = 10.0;
    double angular_threshold = 0.1;
    long fig2_max_iterations = 4000;

    // fig3
    std::vector<double> init_norms = {1e-3, 1e-2, 1e-1, 1.0};
    Eigen::Index m_per_norm = 5;

    // convergence study
    std::vector<Eigen::Index> m_list = {16, 64, 256};
    std::vector<double> t_grid = {0.5, 1.0};
    int n_seeds = 5;
    double convergence_dt = 1e-2;
    bool paired_seeds = true;

    std::string out_dir = ".";

    static ExperimentConfig defaults();
    static ExperimentConfig from_json_file(const std::string& path);
};

struct Fig1Result {
    double sector_ratio_bn = 0.0;      // minor/major sector median probe speed
    double sector_ratio_vanilla = 0.0; // recorded only
    bool isotropic_control = false;
    bool passed = false;
};

struct Fig2Result {
    double median_first_passage_small = 0.0; // iterations; inf mapped to max+1
    double median_first_passage_large = 0.0;
    double t0_speed_ratio = 0.0; // small over large instantaneous ||b_dot||
    bool passed = false;
};

struct Fig3Result {
    struct Record {
        double pre_norm = 0.0;
        double post_norm = 0.0;
        double speed = 0.0;      // ||b_dot|| before the step
        double post_speed = 0.0; // ||b_dot|| after the step
        double tangency = 0.0;   // |b' b_dot| / (||b|| ||b_dot||)
        double pythagoras_rel = 0.0;
    };
    std::vector<Record> records;
    bool all_grew = false;
    bool ordering_reversed = false;
    bool no_blowup = false;
    bool passed = false;
};

struct CheckResult {
    std::string name;
    bool passed = false;
    double measured = 0.0;
    double tolerance = 0.0;
    std::string note;
};

struct VerifyReport {
    std::vector<CheckResult> checks;
    bool all_passed() const;
};

struct ConvergenceResult {
    ConvergenceTable table;
    bool passed = false;
};

/// Anisotropic-speed experiment: trains BN and vanilla models, emits the
/// angle -> tangential-speed table at the configured iteration plus direction
/// snapshots, and compares sector median speeds. With an isotropic Sigma the
/// run acts as the flat-profile control.
Fig1Result run_fig1(const ExperimentConfig& config);

/// Magnitude-dependent-speed experiment: two init-scale groups with matched
/// directions, angular first-passage to the nearest teacher direction.
Fig2Result run_fig2(const ExperimentConfig& config);

/// First-step amplification experiment: one gradient-descent step across
/// init norms spanning decades.
Fig3Result run_fig3(const ExperimentConfig& config);

/// Full invariant suite (gradient checks, trajectory equivalence, metric
/// properties, OT brute-force agreement, speed-bound audit, regular-point
/// identity); writes a JSON report.
VerifyReport run_verify(const ExperimentConfig& config);

ConvergenceResult run_convergence_study(const ExperimentConfig& config);

/// Teacher directions used by the figure experiments: fixed angles in d = 2,
/// seeded unit vectors otherwise, all with a* = 1.
TeacherSpec default_teacher(const ExperimentConfig& config);

void write_verify_json(const VerifyReport& report, const std::string& path);
void write_convergence_csv(const ConvergenceTable& table, const std::string& path);
void write_convergence_json(const ConvergenceTable& table, const std::string& path);

} // namespace bnflow
