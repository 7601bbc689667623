#include "odeplan/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <sstream>
#include <thread>

namespace odeplan {

namespace fs = std::filesystem;

TruthRealization draw_truth(const ExperimentConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  TruthRealization out;
  out.z = sample_prior(cfg.prior, rng);
  out.training = simulate_truth_training(out.z, cfg.meals, cfg.training_input(),
                                         cfg.window, cfg.truth_step, cfg.record_dt);
  out.x_at_zero = out.training.states.back().head<3>();
  return out;
}

Dataset make_dataset(const ExperimentConfig& cfg, const TruthRealization& truth,
                     std::uint64_t seed) {
  Rng rng(seed);
  return sample_measurements(truth.training, -cfg.window, cfg.measurements,
                             cfg.noise_sigma, rng);
}

InferenceResult run_inference(const ExperimentConfig& cfg, const Dataset& data,
                              std::uint64_t chain_seed) {
  ChainConfig chain = cfg.chain;
  chain.K = cfg.scenarios;
  chain.seed = chain_seed;
  return run_glucose_inference(data, cfg.meals, cfg.training_input(), cfg.prior, chain,
                               cfg.integrator);
}

std::vector<Scenario> scenarios_from_posterior(const PosteriorSampleSet& posterior) {
  std::vector<Scenario> out;
  out.reserve(posterior.samples.size());
  for (size_t i = 0; i < posterior.samples.size(); ++i) {
    out.push_back({posterior.samples[i].theta, posterior.samples[i].x0,
                   static_cast<int>(i)});
  }
  return out;
}

namespace {

ScenarioEnvelope predict_envelope(const ExperimentConfig& cfg,
                                  const std::vector<Scenario>& scenarios,
                                  const ControlTrajectory& control) {
  const auto grid = cfg.control_grid();
  ScenarioEnvelope env;
  env.times = sample_times(0.0, cfg.horizon, cfg.record_dt);
  env.glucose.reserve(scenarios.size());

  auto d = [&cfg](double t) { return meal_rate(cfg.meals, t); };
  for (const auto& sc : scenarios) {
    const BergmanField field{params_from_theta(sc.theta)};
    const auto traj = integrate_piecewise(field, Vec(sc.x0), grid, control.values, d,
                                          cfg.integrator, env.times);
    std::vector<double> g(traj.states.size());
    for (size_t i = 0; i < traj.states.size(); ++i) g[i] = traj.states[i][kG];
    env.glucose.push_back(std::move(g));
  }

  const size_t T = env.times.size();
  env.mean.assign(T, 0.0);
  env.lo.assign(T, std::numeric_limits<double>::infinity());
  env.hi.assign(T, -std::numeric_limits<double>::infinity());
  for (const auto& g : env.glucose) {
    for (size_t i = 0; i < T; ++i) {
      env.mean[i] += g[i];
      env.lo[i] = std::min(env.lo[i], g[i]);
      env.hi[i] = std::max(env.hi[i], g[i]);
    }
  }
  const double K = static_cast<double>(env.glucose.size());
  for (size_t i = 0; i < T; ++i) env.mean[i] /= K;
  return env;
}

}  // namespace

PlanResult plan_scenarios(const ExperimentConfig& cfg,
                          const std::vector<Scenario>& scenarios) {
  const auto grid = cfg.control_grid();
  const auto spec = glucose_ocp_spec(cfg.ocp_weights);
  BergmanScenarioModel model(scenarios, cfg.meals, grid, cfg.integrator.step);
  auto [control, report] = solve_ocp(model, grid, spec, cfg.integrator.step, cfg.solver,
                                     Eigen::VectorXd::Zero(grid.intervals()));
  PlanResult out;
  out.control = control;
  out.report = report;
  out.envelope = predict_envelope(cfg, scenarios, control);
  return out;
}

EvaluationOutcome evaluate_control(const ExperimentConfig& cfg,
                                   const Eigen::Vector3d& theta_true,
                                   const Eigen::Vector3d& x0_true,
                                   const ControlTrajectory& control) {
  if (control.values.size() != cfg.intervals) {
    throw std::invalid_argument("control horizon does not match the configuration");
  }
  const auto grid = cfg.control_grid();
  ControlSignal u{&grid, &control.values};
  auto d = [&cfg](double t) { return meal_rate(cfg.meals, t); };
  const BergmanField field{params_from_theta(theta_true)};
  const auto record = sample_times(0.0, cfg.horizon, cfg.record_dt);

  EvaluationOutcome out;
  const IntegratorConfig truth_cfg{cfg.truth_step, Scheme::kTsit54};
  out.realized = integrate_piecewise(field, Vec(x0_true), grid, control.values, d,
                                     truth_cfg, record);

  const auto& w = cfg.ocp_weights;
  const size_t T = out.realized.times.size();
  out.min_G = std::numeric_limits<double>::infinity();
  out.max_G = -std::numeric_limits<double>::infinity();
  double integral = 0.0;
  double prev_integrand = 0.0;
  for (size_t i = 0; i < T; ++i) {
    const double t = out.realized.times[i];
    const double G = out.realized.states[i][kG];
    const double ut = u(t);
    const double e = G - w.G_ref;
    const double integrand = w.W_G * e * e + w.W_U * ut * ut;
    if (i > 0) {
      integral += 0.5 * (prev_integrand + integrand) *
                  (out.realized.times[i] - out.realized.times[i - 1]);
    }
    prev_integrand = integrand;
    out.min_G = std::min(out.min_G, G);
    out.max_G = std::max(out.max_G, G);
    if (G < w.G_lo || G > w.G_hi) out.violation = true;
  }
  const double eT = out.realized.states.back()[kG] - w.G_ref;
  out.cost = integral + w.W_Gf * eT * eT;
  return out;
}

RunRecord run_monte_carlo_single(const ExperimentConfig& cfg, int run_index) {
  RunRecord rec;
  rec.run = run_index;
  try {
    const auto truth = draw_truth(cfg, derive_seed(cfg.master_seed, run_index, kStreamTruth));
    rec.truth = truth.z;
    rec.truth_x0 = truth.x_at_zero;
    const auto data =
        make_dataset(cfg, truth, derive_seed(cfg.master_seed, run_index, kStreamMeasurement));

    {  // MMH-scenario method
      const auto t0 = std::chrono::steady_clock::now();
      const auto inference =
          run_inference(cfg, data, derive_seed(cfg.master_seed, run_index, kStreamChain));
      const auto scen = scenarios_from_posterior(inference.posterior);
      const auto planned = plan_scenarios(cfg, scen);
      const auto eval = evaluate_control(cfg, truth.z.theta, truth.x_at_zero, planned.control);
      rec.mmh.cost = eval.cost;
      rec.mmh.violation = eval.violation;
      rec.mmh.min_G = eval.min_G;
      rec.mmh.max_G = eval.max_G;
      rec.mmh.solve_success = planned.report.success;
      rec.mmh.solve_residual = planned.report.max_violation;
      rec.mmh.wall_ms = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();

      rec.envelope_contained = true;
      for (size_t i = 0; i < planned.envelope.times.size(); ++i) {
        const double G = eval.realized.states[i][kG];
        if (G < planned.envelope.lo[i] - kEnvelopeSlack ||
            G > planned.envelope.hi[i] + kEnvelopeSlack) {
          rec.envelope_contained = false;
          break;
        }
      }
    }

    {  // nominal + EKF baseline
      const auto t0 = std::chrono::steady_clock::now();
      const auto grid = cfg.control_grid();
      const auto spec = glucose_ocp_spec(cfg.ocp_weights);
      auto [control, report] =
          nominal_plan(data, nominal_params(cfg.prior), cfg.meals, cfg.training_input(),
                       cfg.prior, cfg.ekf, spec, grid, cfg.integrator.step, cfg.solver);
      const auto eval = evaluate_control(cfg, truth.z.theta, truth.x_at_zero, control);
      rec.nominal.cost = eval.cost;
      rec.nominal.violation = eval.violation;
      rec.nominal.min_G = eval.min_G;
      rec.nominal.max_G = eval.max_G;
      rec.nominal.solve_success = report.success;
      rec.nominal.solve_residual = report.max_violation;
      rec.nominal.wall_ms = std::chrono::duration<double, std::milli>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
    }
  } catch (const std::exception& e) {
    rec.error = e.what();
  }
  return rec;
}

MonteCarloResult monte_carlo(const ExperimentConfig& cfg) {
  MonteCarloResult result;
  result.runs.resize(cfg.runs);

  int threads = cfg.threads > 0 ? cfg.threads
                                : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, std::max(1, cfg.runs));

  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= cfg.runs) break;
      result.runs[r] = run_monte_carlo_single(cfg, r);
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  result.summary_text = summarize(cfg, result.runs);
  return result;
}

namespace {

struct CostStats {
  double mean = 0.0;
  double sd = 0.0;
  int count = 0;
};

CostStats cost_stats(const std::vector<RunRecord>& runs, bool nominal) {
  CostStats s;
  for (const auto& r : runs) {
    if (!r.ok()) continue;
    s.mean += nominal ? r.nominal.cost : r.mmh.cost;
    ++s.count;
  }
  if (s.count > 0) s.mean /= s.count;
  double ss = 0.0;
  for (const auto& r : runs) {
    if (!r.ok()) continue;
    const double c = (nominal ? r.nominal.cost : r.mmh.cost) - s.mean;
    ss += c * c;
  }
  if (s.count > 1) s.sd = std::sqrt(ss / (s.count - 1));
  return s;
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::string summarize(const ExperimentConfig& cfg, const std::vector<RunRecord>& runs) {
  int mmh_viol = 0, nom_viol = 0, contained = 0, failed = 0, ok = 0;
  int unsuccessful_solves = 0;
  double max_residual = 0.0;
  for (const auto& r : runs) {
    if (!r.ok()) {
      ++failed;
      continue;
    }
    ++ok;
    mmh_viol += r.mmh.violation ? 1 : 0;
    nom_viol += r.nominal.violation ? 1 : 0;
    contained += r.envelope_contained ? 1 : 0;
    unsuccessful_solves += (r.mmh.solve_success ? 0 : 1) + (r.nominal.solve_success ? 0 : 1);
    max_residual = std::max({max_residual, r.mmh.solve_residual, r.nominal.solve_residual});
  }
  const auto mmh = cost_stats(runs, false);
  const auto nom = cost_stats(runs, true);

  std::ostringstream out;
  out << "runs = " << runs.size() << "\n";
  out << "completed_runs = " << ok << "\n";
  out << "failed_runs = " << failed << "\n";
  out << "scenarios = " << cfg.scenarios << "\n";
  out << "master_seed = " << cfg.master_seed << "\n";
  out << "config_fingerprint = " << config_fingerprint(cfg) << "\n";
  out << "mmh_mean_cost_x1e4 = " << fixed2(mmh.mean / 1e4) << "\n";
  out << "mmh_std_cost_x1e4 = " << fixed2(mmh.sd / 1e4) << "\n";
  out << "mmh_violations = " << mmh_viol << "\n";
  out << "nominal_mean_cost_x1e4 = " << fixed2(nom.mean / 1e4) << "\n";
  out << "nominal_std_cost_x1e4 = " << fixed2(nom.sd / 1e4) << "\n";
  out << "nominal_violations = " << nom_viol << "\n";
  out << "envelope_contained_runs = " << contained << "\n";
  out << "unsuccessful_solves = " << unsuccessful_solves << "\n";
  out << "max_solver_residual = " << format_double(max_residual) << "\n";
  out << "\n";
  out << "method, cost_x1e4, violations\n";
  out << "mmh-scenario, " << fixed2(mmh.mean / 1e4) << " +/- " << fixed2(mmh.sd / 1e4)
      << ", " << mmh_viol << "/" << ok << "\n";
  out << "nominal-ekf, " << fixed2(nom.mean / 1e4) << " +/- " << fixed2(nom.sd / 1e4)
      << ", " << nom_viol << "/" << ok << "\n";
  return out.str();
}

// ---- file-writing command fronts --------------------------------------

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string());
}

void write_truth_csv(const fs::path& path, const LatentSample& z,
                     const Eigen::Vector3d& x_at_zero) {
  CsvTable t;
  t.columns = {"p2", "p3", "n", "G_init", "X_init", "I_init", "G0", "X0", "I0"};
  t.rows = {{z.theta[0], z.theta[1], z.theta[2], z.x0[0], z.x0[1], z.x0[2], x_at_zero[0],
             x_at_zero[1], x_at_zero[2]}};
  write_csv(path, t);
}

void write_trajectory_csv(const fs::path& path, const Trajectory& traj) {
  CsvTable t;
  t.columns = {"t_min", "G", "X", "I"};
  t.rows.reserve(traj.times.size());
  for (size_t i = 0; i < traj.times.size(); ++i) {
    t.rows.push_back({traj.times[i], traj.states[i][kG], traj.states[i][kX],
                      traj.states[i][kI]});
  }
  write_csv(path, t);
}

void write_samples_csv(const fs::path& path, const PosteriorSampleSet& set) {
  CsvTable t;
  t.columns = {"p2", "p3", "n", "G0", "X0", "I0", "logpost"};
  t.rows.reserve(set.samples.size());
  for (size_t i = 0; i < set.samples.size(); ++i) {
    const auto& z = set.samples[i];
    t.rows.push_back({z.theta[0], z.theta[1], z.theta[2], z.x0[0], z.x0[1], z.x0[2],
                      set.logpost[i]});
  }
  write_csv(path, t);
}

void write_acf_csv(const fs::path& path, const std::vector<LatentSample>& chain,
                   int max_lag) {
  const long n = static_cast<long>(chain.size());
  std::array<std::vector<double>, 6> series;
  for (auto& s : series) s.resize(n);
  for (long i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) series[c][i] = chain[i].theta[c];
    for (int c = 0; c < 3; ++c) series[3 + c][i] = chain[i].x0[c];
  }
  CsvTable t;
  t.columns = {"lag", "p2", "p3", "n", "G", "X", "I"};
  std::array<std::vector<double>, 6> rho;
  for (int c = 0; c < 6; ++c) rho[c] = acf(series[c], max_lag);
  for (int lag = 0; lag <= max_lag; ++lag) {
    t.rows.push_back({static_cast<double>(lag), rho[0][lag], rho[1][lag], rho[2][lag],
                      rho[3][lag], rho[4][lag], rho[5][lag]});
  }
  write_csv(path, t);
}

void write_stage_csv(const fs::path& path, const std::vector<StageReport>& stages) {
  CsvTable t;
  t.columns = {"stage", "measurements", "accepted", "proposed", "acceptance", "scale"};
  for (size_t i = 0; i < stages.size(); ++i) {
    t.rows.push_back({static_cast<double>(i), static_cast<double>(stages[i].measurements),
                      static_cast<double>(stages[i].accepted),
                      static_cast<double>(stages[i].proposed), stages[i].acceptance,
                      stages[i].scale});
  }
  write_csv(path, t);
}

void write_control_csv(const fs::path& path, const ControlGrid& grid,
                       const ControlTrajectory& control) {
  CsvTable t;
  t.columns = {"t_min", "u_mU_per_min"};
  for (int n = 0; n < control.size(); ++n) {
    t.rows.push_back({grid.nodes[n], control.values[n]});
  }
  write_csv(path, t);
}

void write_envelope_csv(const fs::path& path, const ScenarioEnvelope& env) {
  CsvTable t;
  t.columns = {"t_min"};
  for (size_t k = 0; k < env.glucose.size(); ++k) {
    t.columns.push_back("G_" + std::to_string(k + 1));
  }
  t.columns.push_back("G_mean");
  t.columns.push_back("G_min");
  t.columns.push_back("G_max");
  for (size_t i = 0; i < env.times.size(); ++i) {
    std::vector<double> row;
    row.reserve(env.glucose.size() + 4);
    row.push_back(env.times[i]);
    for (const auto& g : env.glucose) row.push_back(g[i]);
    row.push_back(env.mean[i]);
    row.push_back(env.lo[i]);
    row.push_back(env.hi[i]);
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

}  // namespace

void cmd_simulate(const ExperimentConfig& cfg, const fs::path& out_dir) {
  ensure_dir(out_dir);
  const auto truth = draw_truth(cfg, derive_seed(cfg.master_seed, 0, kStreamTruth));
  const auto data =
      make_dataset(cfg, truth, derive_seed(cfg.master_seed, 0, kStreamMeasurement));

  CsvTable t;
  t.columns = {"t_min", "y_mgdl"};
  for (size_t i = 0; i < data.times.size(); ++i) {
    t.rows.push_back({data.times[i], data.values[i]});
  }
  write_csv(out_dir / "dataset.csv", t);
  write_truth_csv(out_dir / "truth.csv", truth.z, truth.x_at_zero);
  write_trajectory_csv(out_dir / "truth_states.csv", truth.training);
}

void cmd_infer(const ExperimentConfig& cfg, const fs::path& dataset_csv,
               const fs::path& out_dir) {
  ensure_dir(out_dir);
  const auto table = read_csv(dataset_csv);
  table.require_columns({"t_min", "y_mgdl"});
  Dataset data;
  data.t_begin = -cfg.window;
  data.noise_sigma = cfg.noise_sigma;
  const int ct = table.column("t_min"), cy = table.column("y_mgdl");
  for (const auto& row : table.rows) {
    data.times.push_back(row[ct]);
    data.values.push_back(row[cy]);
  }

  const auto inference =
      run_inference(cfg, data, derive_seed(cfg.master_seed, 0, kStreamChain));
  PosteriorSampleSet posterior = inference.posterior;
  posterior.provenance = config_fingerprint(cfg);
  write_samples_csv(out_dir / "samples.csv", posterior);
  write_acf_csv(out_dir / "acf.csv", inference.production_chain, 50);
  write_stage_csv(out_dir / "stages.csv", inference.stages);
}

void cmd_plan(const ExperimentConfig& cfg, const fs::path& samples_csv,
              const fs::path& out_dir) {
  ensure_dir(out_dir);
  const auto table = read_csv(samples_csv);
  table.require_columns({"p2", "p3", "n", "G0", "X0", "I0"});
  std::vector<Scenario> scenarios;
  const int of[6] = {table.column("p2"), table.column("p3"), table.column("n"),
                     table.column("G0"), table.column("X0"), table.column("I0")};
  for (const auto& row : table.rows) {
    Scenario sc;
    sc.theta = {row[of[0]], row[of[1]], row[of[2]]};
    sc.x0 = {row[of[3]], row[of[4]], row[of[5]]};
    sc.index = static_cast<int>(scenarios.size());
    scenarios.push_back(sc);
  }
  const auto planned = plan_scenarios(cfg, scenarios);
  write_control_csv(out_dir / "control.csv", cfg.control_grid(), planned.control);
  write_envelope_csv(out_dir / "envelope.csv", planned.envelope);

  std::ostringstream rep;
  rep << "success = " << (planned.report.success ? "true" : "false") << "\n"
      << "cost = " << format_double(planned.report.cost) << "\n"
      << "max_violation = " << format_double(planned.report.max_violation) << "\n"
      << "outer_iterations = " << planned.report.outer_iterations << "\n"
      << "inner_iterations = " << planned.report.inner_iterations << "\n";
  write_text(out_dir / "plan_report.txt", rep.str());
}

void cmd_evaluate(const ExperimentConfig& cfg, const fs::path& control_csv,
                  const fs::path& truth_csv, const fs::path& out_dir) {
  ensure_dir(out_dir);
  const auto ctab = read_csv(control_csv);
  ctab.require_columns({"t_min", "u_mU_per_min"});
  ControlTrajectory control;
  control.values.resize(static_cast<Eigen::Index>(ctab.rows.size()));
  const int cu = ctab.column("u_mU_per_min");
  for (size_t i = 0; i < ctab.rows.size(); ++i) control.values[i] = ctab.rows[i][cu];
  control.u_min = cfg.ocp_weights.u_min;
  control.u_max = cfg.ocp_weights.u_max;

  const auto ttab = read_csv(truth_csv);
  ttab.require_columns({"p2", "p3", "n", "G0", "X0", "I0"});
  if (ttab.rows.empty()) throw std::runtime_error("truth file has no rows");
  const auto& row = ttab.rows.front();
  const Eigen::Vector3d theta{row[ttab.column("p2")], row[ttab.column("p3")],
                              row[ttab.column("n")]};
  const Eigen::Vector3d x0{row[ttab.column("G0")], row[ttab.column("X0")],
                           row[ttab.column("I0")]};

  const auto outcome = evaluate_control(cfg, theta, x0, control);
  std::ostringstream rep;
  rep << "cost = " << format_double(outcome.cost) << "\n"
      << "violation = " << (outcome.violation ? "true" : "false") << "\n"
      << "min_G = " << format_double(outcome.min_G) << "\n"
      << "max_G = " << format_double(outcome.max_G) << "\n";
  write_text(out_dir / "evaluation.txt", rep.str());
  write_trajectory_csv(out_dir / "realized.csv", outcome.realized);
}

void cmd_monte_carlo(const ExperimentConfig& cfg, const fs::path& out_dir) {
  ensure_dir(out_dir);
  const auto result = monte_carlo(cfg);

  std::ostringstream runs;
  runs << "run,method,cost,violation,min_G,max_G,solve_success,solve_residual,"
          "envelope_contained,wall_ms,p2_true,p3_true,n_true,G_init,X_init,I_init,error\n";
  for (const auto& r : result.runs) {
    auto row = [&](const char* method, const MethodRecord& m, int contained) {
      runs << r.run << ',' << method << ',' << format_double(m.cost) << ','
           << (m.violation ? 1 : 0) << ',' << format_double(m.min_G) << ','
           << format_double(m.max_G) << ',' << (m.solve_success ? 1 : 0) << ','
           << format_double(m.solve_residual) << ',' << contained << ','
           << format_double(m.wall_ms) << ',' << format_double(r.truth.theta[0]) << ','
           << format_double(r.truth.theta[1]) << ',' << format_double(r.truth.theta[2])
           << ',' << format_double(r.truth.x0[0]) << ',' << format_double(r.truth.x0[1])
           << ',' << format_double(r.truth.x0[2]) << ',' << r.error << '\n';
    };
    row("mmh", r.mmh, r.envelope_contained ? 1 : 0);
    row("nominal", r.nominal, -1);
  }
  write_text(out_dir / "runs.csv", runs.str());
  write_text(out_dir / "summary.txt", result.summary_text);
}

void cmd_acf(const ExperimentConfig& cfg, const fs::path& out_dir, long iterations) {
  ensure_dir(out_dir);
  const auto truth = draw_truth(cfg, derive_seed(cfg.master_seed, 0, kStreamTruth));
  const auto data =
      make_dataset(cfg, truth, derive_seed(cfg.master_seed, 0, kStreamMeasurement));

  ChainConfig chain = cfg.chain;
  chain.K = static_cast<int>(iterations);
  chain.K_b = 0;
  chain.k_d = 0;
  chain.seed = derive_seed(cfg.master_seed, 0, kStreamChain);
  const auto inference = run_glucose_inference(data, cfg.meals, cfg.training_input(),
                                               cfg.prior, chain, cfg.integrator);
  write_acf_csv(out_dir / "acf.csv", inference.production_chain, 50);
  write_stage_csv(out_dir / "stages.csv", inference.stages);
}

}  // namespace odeplan
