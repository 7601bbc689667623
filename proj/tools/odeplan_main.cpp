#include <CLI11.hpp>
#include <iostream>

#include "odeplan/experiment.hpp"

namespace {

struct GlobalOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool full_scale = false;
};

odeplan::ExperimentConfig resolve_config(const GlobalOpts& g) {
  odeplan::ExperimentConfig cfg;
  if (!g.config_path.empty()) cfg = odeplan::load_config(g.config_path);
  if (g.seed_set) cfg.master_seed = g.seed;
  if (g.full_scale) cfg.apply_full_scale();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian ODE inference and scenario-based insulin planning"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "configuration file (TOML-style)")
      ->check(CLI::ExistingFile);
  app.add_option("--out", g.out_dir, "output directory");
  auto* seed_opt = app.add_option("--seed", g.seed, "master seed override");
  app.add_flag("--full-scale", g.full_scale,
               "run at full scale (100 runs, 100 scenarios)");

  auto* simulate = app.add_subcommand("simulate", "sample a truth and write a dataset");
  auto* infer = app.add_subcommand("infer", "run posterior inference on a dataset");
  std::string dataset_csv = "out/dataset.csv";
  infer->add_option("--dataset", dataset_csv, "dataset CSV (t_min,y_mgdl)");
  auto* plan = app.add_subcommand("plan", "solve the scenario control problem");
  std::string samples_csv = "out/samples.csv";
  plan->add_option("--samples", samples_csv, "posterior samples CSV");
  auto* evaluate = app.add_subcommand("evaluate", "apply a control to the true system");
  std::string control_csv = "out/control.csv";
  std::string truth_csv = "out/truth.csv";
  evaluate->add_option("--control", control_csv, "control CSV (t_min,u_mU_per_min)");
  evaluate->add_option("--truth", truth_csv, "truth CSV (from simulate)");
  auto* monte = app.add_subcommand("monte-carlo", "run the full method comparison");
  auto* acf_cmd = app.add_subcommand("acf", "autocorrelation of one long unthinned chain");
  long acf_iterations = 20000;
  acf_cmd->add_option("--iterations", acf_iterations, "accepted samples in the chain");
  auto* print_config = app.add_subcommand("print-config", "write the effective config");

  CLI11_PARSE(app, argc, argv);
  g.seed_set = seed_opt->count() > 0;

  try {
    odeplan::ExperimentConfig cfg = resolve_config(g);
    if (simulate->parsed()) {
      odeplan::cmd_simulate(cfg, g.out_dir);
    } else if (infer->parsed()) {
      odeplan::cmd_infer(cfg, dataset_csv, g.out_dir);
    } else if (plan->parsed()) {
      odeplan::cmd_plan(cfg, samples_csv, g.out_dir);
    } else if (evaluate->parsed()) {
      odeplan::cmd_evaluate(cfg, control_csv, truth_csv, g.out_dir);
    } else if (monte->parsed()) {
      odeplan::cmd_monte_carlo(cfg, g.out_dir);
    } else if (acf_cmd->parsed()) {
      if (g.full_scale && acf_iterations == 20000) acf_iterations = 100000;
      odeplan::cmd_acf(cfg, g.out_dir, acf_iterations);
    } else if (print_config->parsed()) {
      std::cout << odeplan::serialize_config(cfg);
    }
  } catch (const odeplan::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const odeplan::ChainError& e) {
    std::cerr << "inference error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
