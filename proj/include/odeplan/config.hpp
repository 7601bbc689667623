#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "odeplan/bergman.hpp"
#include "odeplan/ekf.hpp"
#include "odeplan/mmh.hpp"
#include "odeplan/ocp.hpp"

namespace odeplan {

// Minimal TOML-style document: [section] headers, key = value lines with
// numbers, booleans, quoted strings, and flat arrays of numbers.
struct ConfigValue {
  std::variant<double, std::uint64_t, bool, std::string, std::vector<double>> v;

  double as_double() const;
  long as_long() const;
  std::uint64_t as_u64() const;
  bool as_bool() const;
  const std::string& as_string() const;
  const std::vector<double>& as_array() const;
};

using ConfigDoc = std::map<std::string, ConfigValue>;  // keys "section.key"

ConfigDoc parse_config_text(const std::string& text);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Full experiment configuration with study defaults.
struct ExperimentConfig {
  // experiment
  std::uint64_t master_seed = 20260809;
  int runs = 20;
  int scenarios = 50;  // posterior samples used for planning (K)
  int full_scale_runs = 100;
  int full_scale_scenarios = 100;
  int threads = 0;  // 0 = auto

  // model + data
  MealSchedule meals = MealSchedule::study_defaults();
  double training_gain = 7.0;
  double window = 720.0;  // T, minutes of training data
  int measurements = 200;
  double noise_sigma = 8.0;
  double truth_step = 0.1;  // ground-truth integrator step
  PriorSpec prior = PriorSpec::study_defaults();
  IntegratorConfig integrator;  // inference/planning integrator (RK4, 0.5)

  // chain
  ChainConfig chain = default_chain_config();

  // ocp
  double horizon = 360.0;
  int intervals = 72;
  GlucoseOcpWeights ocp_weights;
  SolverConfig solver;

  // ekf
  EkfConfig ekf;

  // evaluation
  double record_dt = 0.5;  // fine grid for realized trajectories

  static ChainConfig default_chain_config();
  void apply_full_scale();

  TrainingInput training_input() const { return TrainingInput{meals, training_gain}; }
  ControlGrid control_grid() const {
    return ControlGrid::uniform(0.0, horizon, intervals);
  }

  bool operator==(const ExperimentConfig&) const = default;
};

// serialize -> parse is lossless for every field.
std::string serialize_config(const ExperimentConfig& cfg);
ExperimentConfig config_from_doc(const ConfigDoc& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

// Short stable fingerprint of the serialized configuration.
std::string config_fingerprint(const ExperimentConfig& cfg);

}  // namespace odeplan
