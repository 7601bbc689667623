#include "odeplan/mmh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace odeplan {

namespace {
constexpr double kLogSqrt2Pi = 0.9189385332046727;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double gaussian_logpdf(double x, double mean, double sd) {
  const double r = (x - mean) / sd;
  return -std::log(sd) - kLogSqrt2Pi - 0.5 * r * r;
}
}  // namespace

void ProposalState::refactor() {
  // Eigendecomposition-based factor; tolerates semidefinite covariances.
  Eigen::SelfAdjointEigenSolver<Mat> es(covariance);
  if (es.info() != Eigen::Success) throw std::runtime_error("proposal covariance factorization failed");
  Vec d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  factor_ = es.eigenvectors() * d.asDiagonal();
}

Vec propose_step(const Vec& zeta, const ProposalState& prop, Rng& rng) {
  Vec xi(zeta.size());
  for (Eigen::Index i = 0; i < xi.size(); ++i) xi[i] = draw_normal(rng);
  return zeta + prop.scale * (prop.factor() * xi);
}

double acceptance_log_ratio(double logpost_new, double logpost_cur, double logq_correction) {
  if (!(logpost_new > kNegInf)) return kNegInf;
  return std::min(0.0, logpost_new - logpost_cur + logq_correction);
}

std::vector<long> thinned_indices(long chain_length, int K_b, int k_d) {
  if (chain_length < K_b + 1) throw std::invalid_argument("chain shorter than burn-in");
  std::vector<long> idx;
  for (long i = K_b; i < chain_length; i += k_d + 1) idx.push_back(i);
  return idx;
}

std::vector<Vec> burn_in_and_thin(const std::vector<Vec>& chain, int K_b, int k_d) {
  const auto idx = thinned_indices(static_cast<long>(chain.size()), K_b, k_d);
  std::vector<Vec> kept;
  kept.reserve(idx.size());
  for (long i : idx) kept.push_back(chain[i]);
  return kept;
}

std::vector<double> acf(std::span<const double> series, int max_lag) {
  const long n = static_cast<long>(series.size());
  if (n <= max_lag) throw std::invalid_argument("series shorter than max_lag");
  double mean = 0;
  for (double s : series) mean += s;
  mean /= static_cast<double>(n);
  double denom = 0;
  for (double s : series) denom += (s - mean) * (s - mean);
  if (denom <= 0) throw std::invalid_argument("acf of a constant series");
  std::vector<double> rho(max_lag + 1);
  for (int lag = 0; lag <= max_lag; ++lag) {
    double num = 0;
    for (long i = 0; i + lag < n; ++i) {
      num += (series[i] - mean) * (series[i + lag] - mean);
    }
    rho[lag] = num / denom;
  }
  return rho;
}

double effective_sample_size(std::span<const double> series) {
  const long n = static_cast<long>(series.size());
  const int max_lag = static_cast<int>(std::min<long>(n - 1, 200));
  const auto rho = acf(series, max_lag);
  double sum = 0;
  for (int lag = 1; lag <= max_lag; ++lag) {
    if (rho[lag] <= 0) break;
    sum += rho[lag];
  }
  return static_cast<double>(n) / (1.0 + 2.0 * sum);
}

// ---- Glucose instance -------------------------------------------------

GlucoseInferenceProblem::GlucoseInferenceProblem(Dataset data, MealSchedule schedule,
                                                 TrainingInput input, PriorSpec prior,
                                                 IntegratorConfig integrator)
    : data_(std::move(data)),
      schedule_(std::move(schedule)),
      input_(std::move(input)),
      prior_(prior),
      integrator_(integrator) {
  if (data_.times.empty()) throw std::invalid_argument("dataset is empty");
  // Stage times of a fixed-step march from -T lie within 1e-6 h of the
  // half-step grid; sampling both one-sided limits of the known signals once
  // avoids re-evaluating exp() per proposal.
  grid_dt_ = integrator_.step / 2.0;
  const long count = std::lround((0.0 - data_.t_begin) / grid_dt_) + 1;
  u_left_.resize(count);
  u_right_.resize(count);
  d_left_.resize(count);
  d_right_.resize(count);
  for (long i = 0; i < count; ++i) {
    const double t = data_.t_begin + i * grid_dt_;
    u_right_[i] = input_(t);  // signals are right-continuous
    u_left_[i] = input_(t - 1e-9);
    d_right_[i] = meal_rate(schedule_, t);
    d_left_[i] = meal_rate(schedule_, t - 1e-9);
  }
}

namespace {
double sided_lookup(double t, double t0, double dt, const std::vector<double>& left,
                    const std::vector<double>& right) {
  const long i = std::lround((t - t0) / dt);
  if (i < 0 || i >= static_cast<long>(right.size())) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  const double ti = t0 + i * dt;
  if (std::abs(t - ti) > 0.4 * dt) return std::numeric_limits<double>::quiet_NaN();
  return t < ti ? left[i] : right[i];
}
}  // namespace

double GlucoseInferenceProblem::signal_u(double t) const {
  const double v = sided_lookup(t, data_.t_begin, grid_dt_, u_left_, u_right_);
  return std::isnan(v) ? input_(t) : v;
}

double GlucoseInferenceProblem::signal_d(double t) const {
  const double v = sided_lookup(t, data_.t_begin, grid_dt_, d_left_, d_right_);
  return std::isnan(v) ? meal_rate(schedule_, t) : v;
}

Vec GlucoseInferenceProblem::to_chain_coords(const LatentSample& z) {
  Vec zeta(6);
  for (int i = 0; i < 3; ++i) zeta[i] = std::log(z.theta[i]);
  for (int i = 0; i < 3; ++i) zeta[3 + i] = z.x0[i];
  return zeta;
}

LatentSample GlucoseInferenceProblem::from_chain_coords(const Vec& zeta) {
  LatentSample z;
  for (int i = 0; i < 3; ++i) z.theta[i] = std::exp(zeta[i]);
  for (int i = 0; i < 3; ++i) z.x0[i] = zeta[3 + i];
  return z;
}

double GlucoseInferenceProblem::log_prior(const Vec& zeta) const {
  double lp = 0;
  for (int i = 0; i < 3; ++i) {
    lp += gaussian_logpdf(zeta[i], prior_.theta[i].mu_log, prior_.theta[i].sigma_log);
  }
  for (int i = 0; i < 3; ++i) {
    lp += gaussian_logpdf(zeta[3 + i], prior_.state[i].mean, prior_.state[i].sd);
  }
  return lp;
}

double GlucoseInferenceProblem::log_likelihood(const Vec& zeta, int use_measurements) const {
  const int m = std::clamp(use_measurements, 1, measurement_count());
  const LatentSample z = from_chain_coords(zeta);
  for (int i = 0; i < 3; ++i) {
    if (!(z.theta[i] > 0) || !std::isfinite(z.theta[i])) return kNegInf;
  }
  const BergmanField field{params_from_theta(z.theta)};
  auto u = [this](double t) { return signal_u(t); };
  auto d = [this](double t) { return signal_d(t); };
  const double t1 = std::max(data_.times[m - 1], data_.t_begin + integrator_.step);
  try {
    const auto traj =
        integrate_flow(field, Vec(z.x0), u, d, data_.t_begin, t1, integrator_,
                       std::span<const double>(data_.times.data(), m));
    double lp = 0;
    for (int i = 0; i < m; ++i) {
      const double r = data_.values[i] - traj.states[i][kG];
      lp += gaussian_logpdf(r, 0.0, data_.noise_sigma);
    }
    return lp;
  } catch (const IntegrationFailure&) {
    return kNegInf;
  }
}

Vec GlucoseInferenceProblem::draw_init(Rng& rng) const {
  return to_chain_coords(sample_prior(prior_, rng));
}

Mat GlucoseInferenceProblem::initial_proposal_covariance() const {
  Mat sigma = Mat::Zero(6, 6);
  for (int i = 0; i < 3; ++i) sigma(i, i) = 0.05 * 0.05;
  for (int i = 0; i < 3; ++i) {
    const double s = prior_.state[i].sd / 10.0;
    sigma(3 + i, 3 + i) = s * s;
  }
  return sigma;
}

double log_likelihood(const LatentSample& z, const Dataset& data,
                      const GlucoseInferenceProblem& problem) {
  (void)data;
  return problem.log_likelihood(GlucoseInferenceProblem::to_chain_coords(z),
                                problem.measurement_count());
}

PosteriorSampleSet map_to_t0(const std::vector<LatentSample>& samples,
                             const std::vector<double>& logpost,
                             const GlucoseInferenceProblem& problem, int* failures) {
  PosteriorSampleSet out;
  out.samples.reserve(samples.size());
  out.logpost.reserve(samples.size());
  int failed = 0;
  auto u = [&problem](double t) { return problem.signal_u(t); };
  auto d = [&problem](double t) { return problem.signal_d(t); };
  const std::array<double, 1> record{0.0};
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& z = samples[i];
    const BergmanField field{params_from_theta(z.theta)};
    try {
      const auto traj = integrate_flow(field, Vec(z.x0), u, d, problem.data().t_begin, 0.0,
                                       problem.integrator(), record);
      LatentSample mapped;
      mapped.theta = z.theta;
      mapped.x0 = traj.states.back().head<3>();
      out.samples.push_back(mapped);
      out.logpost.push_back(i < logpost.size() ? logpost[i] : 0.0);
    } catch (const IntegrationFailure&) {
      ++failed;
    }
  }
  if (failures) *failures = failed;
  return out;
}

InferenceResult run_glucose_inference(const Dataset& data, const MealSchedule& schedule,
                                      const TrainingInput& input, const PriorSpec& prior,
                                      const ChainConfig& cfg,
                                      const IntegratorConfig& integrator) {
  GlucoseInferenceProblem problem(data, schedule, input, prior, integrator);
  Rng rng(cfg.seed);
  auto result = run_chain(problem, cfg, problem.initial_proposal_covariance(), rng);

  InferenceResult out;
  out.stages = result.stages;
  out.total_proposals = result.total_proposals;
  out.production_chain.reserve(result.chain.size());
  for (const auto& zeta : result.chain) {
    out.production_chain.push_back(GlucoseInferenceProblem::from_chain_coords(zeta));
  }
  out.production_logpost = result.logpost;

  const auto idx = thinned_indices(static_cast<long>(result.chain.size()), cfg.K_b, cfg.k_d);
  std::vector<LatentSample> retained;
  std::vector<double> retained_lp;
  retained.reserve(idx.size());
  for (long i : idx) {
    retained.push_back(out.production_chain[i]);
    retained_lp.push_back(result.logpost[i]);
  }
  int failures = 0;
  out.posterior = map_to_t0(retained, retained_lp, problem, &failures);
  out.posterior.seed = cfg.seed;
  return out;
}

}  // namespace odeplan
