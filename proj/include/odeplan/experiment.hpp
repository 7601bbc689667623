#pragma once

#include <filesystem>
#include <optional>

#include "odeplan/config.hpp"
#include "odeplan/csv.hpp"
#include "odeplan/ekf.hpp"

namespace odeplan {

// Seed streams per run: seed = derive_seed(master, run, stream).
inline constexpr std::uint64_t kStreamTruth = 1;
inline constexpr std::uint64_t kStreamMeasurement = 2;
inline constexpr std::uint64_t kStreamChain = 3;

struct TruthRealization {
  LatentSample z;       // theta and x(-T)
  Trajectory training;  // ground truth on [-T, 0], record_dt grid
  Eigen::Vector3d x_at_zero;
};

TruthRealization draw_truth(const ExperimentConfig& cfg, std::uint64_t seed);
Dataset make_dataset(const ExperimentConfig& cfg, const TruthRealization& truth,
                     std::uint64_t seed);
InferenceResult run_inference(const ExperimentConfig& cfg, const Dataset& data,
                              std::uint64_t chain_seed);

std::vector<Scenario> scenarios_from_posterior(const PosteriorSampleSet& posterior);

// Per-scenario glucose predictions under the planned input on the fine grid,
// with mean/min/max envelope columns.
struct ScenarioEnvelope {
  std::vector<double> times;
  std::vector<std::vector<double>> glucose;  // one series per scenario
  std::vector<double> mean, lo, hi;
};

struct PlanResult {
  ControlTrajectory control;
  SolveReport report;
  ScenarioEnvelope envelope;
};

PlanResult plan_scenarios(const ExperimentConfig& cfg, const std::vector<Scenario>& scenarios);

// Realized response of the true system under a control trajectory, evaluated
// on the fine grid: trapezoidal running cost plus terminal term, hard bound
// check, realized extrema.
struct EvaluationOutcome {
  double cost = 0.0;
  bool violation = false;
  double min_G = 0.0;
  double max_G = 0.0;
  Trajectory realized;
};

EvaluationOutcome evaluate_control(const ExperimentConfig& cfg,
                                   const Eigen::Vector3d& theta_true,
                                   const Eigen::Vector3d& x0_true,
                                   const ControlTrajectory& control);

// Envelope containment slack used by the Monte Carlo study (mg/dL).
inline constexpr double kEnvelopeSlack = 5.0;

struct MethodRecord {
  double cost = 0.0;
  bool violation = false;
  double min_G = 0.0;
  double max_G = 0.0;
  bool solve_success = false;
  double solve_residual = 0.0;
  double wall_ms = 0.0;
};

struct RunRecord {
  int run = 0;
  LatentSample truth;          // theta, x(-T)
  Eigen::Vector3d truth_x0;    // x(0)
  MethodRecord mmh, nominal;
  bool envelope_contained = false;
  std::string error;  // nonempty if this run failed

  bool ok() const { return error.empty(); }
};

struct MonteCarloResult {
  std::vector<RunRecord> runs;
  std::string summary_text;
};

RunRecord run_monte_carlo_single(const ExperimentConfig& cfg, int run_index);
MonteCarloResult monte_carlo(const ExperimentConfig& cfg);
std::string summarize(const ExperimentConfig& cfg, const std::vector<RunRecord>& runs);

// CLI entry points; each writes its CSV outputs under out_dir.
void cmd_simulate(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);
void cmd_infer(const ExperimentConfig& cfg, const std::filesystem::path& dataset_csv,
               const std::filesystem::path& out_dir);
void cmd_plan(const ExperimentConfig& cfg, const std::filesystem::path& samples_csv,
              const std::filesystem::path& out_dir);
void cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& control_csv,
                  const std::filesystem::path& truth_csv,
                  const std::filesystem::path& out_dir);
void cmd_monte_carlo(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);
void cmd_acf(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
             long iterations);

}  // namespace odeplan
