#include "odeplan/config.hpp"

#include <charconv>
#include <sstream>

#include "odeplan/csv.hpp"
#include "odeplan/rng.hpp"

namespace odeplan {

double ConfigValue::as_double() const {
  if (std::holds_alternative<double>(v)) return std::get<double>(v);
  if (std::holds_alternative<std::uint64_t>(v)) {
    return static_cast<double>(std::get<std::uint64_t>(v));
  }
  throw ConfigError("expected a number");
}

long ConfigValue::as_long() const {
  if (std::holds_alternative<std::uint64_t>(v)) {
    return static_cast<long>(std::get<std::uint64_t>(v));
  }
  const double d = as_double();
  const long l = std::lround(d);
  if (d != static_cast<double>(l)) throw ConfigError("expected an integer");
  return l;
}

std::uint64_t ConfigValue::as_u64() const {
  if (std::holds_alternative<std::uint64_t>(v)) return std::get<std::uint64_t>(v);
  const double d = as_double();
  if (d < 0 || d != std::floor(d)) throw ConfigError("expected a non-negative integer");
  return static_cast<std::uint64_t>(d);
}

bool ConfigValue::as_bool() const {
  if (std::holds_alternative<bool>(v)) return std::get<bool>(v);
  throw ConfigError("expected a boolean");
}

const std::string& ConfigValue::as_string() const {
  if (std::holds_alternative<std::string>(v)) return std::get<std::string>(v);
  throw ConfigError("expected a string");
}

const std::vector<double>& ConfigValue::as_array() const {
  if (std::holds_alternative<std::vector<double>>(v)) {
    return std::get<std::vector<double>>(v);
  }
  throw ConfigError("expected an array");
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_number(const std::string& tok, int line_no) {
  double d = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), d);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    throw ConfigError("line " + std::to_string(line_no) + ": bad number '" + tok + "'");
  }
  return d;
}

ConfigValue parse_value(const std::string& raw, int line_no) {
  const std::string s = trim(raw);
  if (s.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty value");
  if (s == "true") return {true};
  if (s == "false") return {false};
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"') {
      throw ConfigError("line " + std::to_string(line_no) + ": unterminated string");
    }
    return {s.substr(1, s.size() - 2)};
  }
  if (s.find_first_not_of("0123456789") == std::string::npos) {
    std::uint64_t u = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), u);
    if (res.ec == std::errc() && res.ptr == s.data() + s.size()) return {u};
  }
  if (s.front() == '[') {
    if (s.back() != ']') {
      throw ConfigError("line " + std::to_string(line_no) + ": unterminated array");
    }
    std::vector<double> arr;
    std::string body = s.substr(1, s.size() - 2);
    std::stringstream ss(body);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell = trim(cell);
      if (!cell.empty()) arr.push_back(parse_number(cell, line_no));
    }
    return {arr};
  }
  return {parse_number(s, line_no)};
}

}  // namespace

ConfigDoc parse_config_text(const std::string& text) {
  ConfigDoc doc;
  std::string section;
  std::stringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    // strip comments (quotes in our values never contain '#')
    if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("line " + std::to_string(line_no) + ": bad section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    std::string full = section.empty() ? key : section + "." + key;
    doc[full] = parse_value(line.substr(eq + 1), line_no);
  }
  return doc;
}

ChainConfig ExperimentConfig::default_chain_config() {
  ChainConfig c;
  c.K = 50;
  c.K_b = 500;
  c.k_d = 25;
  c.stages = {{25, 2000}, {50, 2000}, {100, 2000}, {200, 2000}};
  c.max_proposals = 10'000'000;
  return c;
}

void ExperimentConfig::apply_full_scale() {
  runs = full_scale_runs;
  scenarios = full_scale_scenarios;
}

namespace {

void put(std::ostringstream& out, const char* key, double v) {
  out << key << " = " << format_double(v) << "\n";
}
void put(std::ostringstream& out, const char* key, int v) { out << key << " = " << v << "\n"; }
void put(std::ostringstream& out, const char* key, std::uint64_t v) {
  out << key << " = " << v << "\n";
}
void put(std::ostringstream& out, const char* key, const std::vector<double>& v) {
  out << key << " = [";
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out << ", ";
    out << format_double(v[i]);
  }
  out << "]\n";
}

}  // namespace

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "# experiment configuration (times in minutes, glucose in mg/dL,\n"
         "# insulin rates in mU/min)\n\n";
  out << "[experiment]\n";
  put(out, "master_seed", c.master_seed);
  put(out, "runs", c.runs);
  put(out, "scenarios", c.scenarios);
  put(out, "full_scale_runs", c.full_scale_runs);
  put(out, "full_scale_scenarios", c.full_scale_scenarios);
  put(out, "threads", c.threads);

  out << "\n[meals]\n";
  std::vector<double> times, sizes;
  for (const auto& m : c.meals.meals) {
    times.push_back(m.time);
    sizes.push_back(m.size);
  }
  put(out, "times", times);
  put(out, "sizes", sizes);
  put(out, "decay", c.meals.decay);

  out << "\n[training_input]\n";
  put(out, "gain", c.training_gain);

  out << "\n[dataset]\n";
  put(out, "window", c.window);
  put(out, "count", c.measurements);
  put(out, "noise_sigma", c.noise_sigma);
  put(out, "truth_step", c.truth_step);

  out << "\n[integrator]\n";
  put(out, "step", c.integrator.step);

  out << "\n[prior]\n";
  put(out, "theta_log_mean",
      {c.prior.theta[0].mu_log, c.prior.theta[1].mu_log, c.prior.theta[2].mu_log});
  put(out, "theta_log_sd",
      {c.prior.theta[0].sigma_log, c.prior.theta[1].sigma_log, c.prior.theta[2].sigma_log});
  put(out, "state_mean",
      {c.prior.state[0].mean, c.prior.state[1].mean, c.prior.state[2].mean});
  put(out, "state_sd", {c.prior.state[0].sd, c.prior.state[1].sd, c.prior.state[2].sd});
  out << "# reported nominal values 0.63 / 1.12 / 0.22 use a different unit\n"
         "# convention; the baseline parameter point is the prior medians exp(mu)\n";

  out << "\n[chain]\n";
  put(out, "retained", c.chain.K);
  put(out, "burn_in", c.chain.K_b);
  put(out, "thinning", c.chain.k_d);
  std::vector<double> sm, si;
  for (const auto& s : c.chain.stages) {
    sm.push_back(s.measurements);
    si.push_back(s.iterations);
  }
  put(out, "stage_measurements", sm);
  put(out, "stage_iterations", si);
  put(out, "max_proposals", static_cast<std::uint64_t>(c.chain.max_proposals));
  put(out, "init_retries", c.chain.init_retries);

  out << "\n[ocp]\n";
  put(out, "horizon", c.horizon);
  put(out, "intervals", c.intervals);
  put(out, "W_G", c.ocp_weights.W_G);
  put(out, "W_Gf", c.ocp_weights.W_Gf);
  put(out, "W_U", c.ocp_weights.W_U);
  put(out, "G_ref", c.ocp_weights.G_ref);
  put(out, "G_min", c.ocp_weights.G_lo);
  put(out, "G_max", c.ocp_weights.G_hi);
  put(out, "u_min", c.ocp_weights.u_min);
  put(out, "u_max", c.ocp_weights.u_max);

  out << "\n[solver]\n";
  put(out, "max_outer", c.solver.max_outer);
  put(out, "max_inner", c.solver.max_inner);
  put(out, "tol_feasibility", c.solver.tol_feasibility);
  put(out, "tol_pg", c.solver.tol_pg);
  put(out, "rho_init", c.solver.rho_init);
  put(out, "rho_max", c.solver.rho_max);

  out << "\n[ekf]\n";
  put(out, "q_rate", {c.ekf.q_rate[0], c.ekf.q_rate[1], c.ekf.q_rate[2]});
  put(out, "step", c.ekf.step);

  out << "\n[evaluate]\n";
  put(out, "record_dt", c.record_dt);
  return out.str();
}

namespace {

template <class T>
void take(ConfigDoc& doc, const char* key, T&& setter) {
  auto it = doc.find(key);
  if (it == doc.end()) return;
  setter(it->second);
  doc.erase(it);
}

}  // namespace

ExperimentConfig config_from_doc(const ConfigDoc& doc_in) {
  ExperimentConfig c;
  ConfigDoc doc = doc_in;

  take(doc, "experiment.master_seed",
       [&](const ConfigValue& v) { c.master_seed = v.as_u64(); });
  take(doc, "experiment.runs", [&](const ConfigValue& v) { c.runs = static_cast<int>(v.as_long()); });
  take(doc, "experiment.scenarios",
       [&](const ConfigValue& v) { c.scenarios = static_cast<int>(v.as_long()); });
  take(doc, "experiment.full_scale_runs",
       [&](const ConfigValue& v) { c.full_scale_runs = static_cast<int>(v.as_long()); });
  take(doc, "experiment.full_scale_scenarios",
       [&](const ConfigValue& v) { c.full_scale_scenarios = static_cast<int>(v.as_long()); });
  take(doc, "experiment.threads",
       [&](const ConfigValue& v) { c.threads = static_cast<int>(v.as_long()); });

  {
    std::vector<double> times, sizes;
    bool have = false;
    take(doc, "meals.times", [&](const ConfigValue& v) {
      times = v.as_array();
      have = true;
    });
    take(doc, "meals.sizes", [&](const ConfigValue& v) {
      sizes = v.as_array();
      have = true;
    });
    if (have) {
      if (times.size() != sizes.size()) throw ConfigError("meals.times/sizes length mismatch");
      c.meals.meals.clear();
      for (size_t i = 0; i < times.size(); ++i) {
        c.meals.meals.push_back({times[i], sizes[i]});
      }
    }
    take(doc, "meals.decay", [&](const ConfigValue& v) { c.meals.decay = v.as_double(); });
  }

  take(doc, "training_input.gain",
       [&](const ConfigValue& v) { c.training_gain = v.as_double(); });
  take(doc, "dataset.window", [&](const ConfigValue& v) { c.window = v.as_double(); });
  take(doc, "dataset.count",
       [&](const ConfigValue& v) { c.measurements = static_cast<int>(v.as_long()); });
  take(doc, "dataset.noise_sigma",
       [&](const ConfigValue& v) { c.noise_sigma = v.as_double(); });
  take(doc, "dataset.truth_step",
       [&](const ConfigValue& v) { c.truth_step = v.as_double(); });
  take(doc, "integrator.step",
       [&](const ConfigValue& v) { c.integrator.step = v.as_double(); });

  auto triple = [](const ConfigValue& v) {
    const auto& a = v.as_array();
    if (a.size() != 3) throw ConfigError("expected 3 entries");
    return a;
  };
  take(doc, "prior.theta_log_mean", [&](const ConfigValue& v) {
    auto a = triple(v);
    for (int i = 0; i < 3; ++i) c.prior.theta[i].mu_log = a[i];
  });
  take(doc, "prior.theta_log_sd", [&](const ConfigValue& v) {
    auto a = triple(v);
    for (int i = 0; i < 3; ++i) c.prior.theta[i].sigma_log = a[i];
  });
  take(doc, "prior.state_mean", [&](const ConfigValue& v) {
    auto a = triple(v);
    for (int i = 0; i < 3; ++i) c.prior.state[i].mean = a[i];
  });
  take(doc, "prior.state_sd", [&](const ConfigValue& v) {
    auto a = triple(v);
    for (int i = 0; i < 3; ++i) c.prior.state[i].sd = a[i];
  });

  take(doc, "chain.retained",
       [&](const ConfigValue& v) { c.chain.K = static_cast<int>(v.as_long()); });
  take(doc, "chain.burn_in",
       [&](const ConfigValue& v) { c.chain.K_b = static_cast<int>(v.as_long()); });
  take(doc, "chain.thinning",
       [&](const ConfigValue& v) { c.chain.k_d = static_cast<int>(v.as_long()); });
  {
    std::vector<double> sm, si;
    bool have = false;
    take(doc, "chain.stage_measurements", [&](const ConfigValue& v) {
      sm = v.as_array();
      have = true;
    });
    take(doc, "chain.stage_iterations", [&](const ConfigValue& v) {
      si = v.as_array();
      have = true;
    });
    if (have) {
      if (sm.size() != si.size()) throw ConfigError("chain stage arrays length mismatch");
      c.chain.stages.clear();
      for (size_t i = 0; i < sm.size(); ++i) {
        c.chain.stages.push_back(
            {static_cast<int>(std::lround(sm[i])), static_cast<int>(std::lround(si[i]))});
      }
    }
  }
  take(doc, "chain.max_proposals",
       [&](const ConfigValue& v) { c.chain.max_proposals = static_cast<long>(v.as_u64()); });
  take(doc, "chain.init_retries",
       [&](const ConfigValue& v) { c.chain.init_retries = static_cast<int>(v.as_long()); });

  take(doc, "ocp.horizon", [&](const ConfigValue& v) { c.horizon = v.as_double(); });
  take(doc, "ocp.intervals",
       [&](const ConfigValue& v) { c.intervals = static_cast<int>(v.as_long()); });
  take(doc, "ocp.W_G", [&](const ConfigValue& v) { c.ocp_weights.W_G = v.as_double(); });
  take(doc, "ocp.W_Gf", [&](const ConfigValue& v) { c.ocp_weights.W_Gf = v.as_double(); });
  take(doc, "ocp.W_U", [&](const ConfigValue& v) { c.ocp_weights.W_U = v.as_double(); });
  take(doc, "ocp.G_ref", [&](const ConfigValue& v) { c.ocp_weights.G_ref = v.as_double(); });
  take(doc, "ocp.G_min", [&](const ConfigValue& v) { c.ocp_weights.G_lo = v.as_double(); });
  take(doc, "ocp.G_max", [&](const ConfigValue& v) { c.ocp_weights.G_hi = v.as_double(); });
  take(doc, "ocp.u_min", [&](const ConfigValue& v) { c.ocp_weights.u_min = v.as_double(); });
  take(doc, "ocp.u_max", [&](const ConfigValue& v) { c.ocp_weights.u_max = v.as_double(); });

  take(doc, "solver.max_outer",
       [&](const ConfigValue& v) { c.solver.max_outer = static_cast<int>(v.as_long()); });
  take(doc, "solver.max_inner",
       [&](const ConfigValue& v) { c.solver.max_inner = static_cast<int>(v.as_long()); });
  take(doc, "solver.tol_feasibility",
       [&](const ConfigValue& v) { c.solver.tol_feasibility = v.as_double(); });
  take(doc, "solver.tol_pg", [&](const ConfigValue& v) { c.solver.tol_pg = v.as_double(); });
  take(doc, "solver.rho_init",
       [&](const ConfigValue& v) { c.solver.rho_init = v.as_double(); });
  take(doc, "solver.rho_max",
       [&](const ConfigValue& v) { c.solver.rho_max = v.as_double(); });

  take(doc, "ekf.q_rate", [&](const ConfigValue& v) {
    auto a = triple(v);
    for (int i = 0; i < 3; ++i) c.ekf.q_rate[i] = a[i];
  });
  take(doc, "ekf.step", [&](const ConfigValue& v) { c.ekf.step = v.as_double(); });

  take(doc, "evaluate.record_dt",
       [&](const ConfigValue& v) { c.record_dt = v.as_double(); });

  if (!doc.empty()) {
    throw ConfigError("unknown configuration key: " + doc.begin()->first);
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return config_from_doc(parse_config_text(read_text(path)));
}

std::string config_fingerprint(const ExperimentConfig& cfg) {
  const std::string text = serialize_config(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace odeplan
