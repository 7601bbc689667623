#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "odeplan/bergman.hpp"
#include "odeplan/ode.hpp"
#include "odeplan/rng.hpp"

namespace odeplan {

// Gaussian random-walk proposal over the transformed chain coordinates
// (log theta, x(-T)): covariance scale^2 * Sigma.
struct ProposalState {
  Mat covariance;
  double scale = 1.0;
  int stage = 0;

  // Factor L with L L^T = covariance; tolerates positive semidefinite input
  // (zero covariance proposes no move).
  void refactor();
  const Mat& factor() const { return factor_; }

 private:
  Mat factor_;
};

Vec propose_step(const Vec& zeta, const ProposalState& prop, Rng& rng);

// log of the Metropolis-Hastings acceptance probability,
// min(0, logpost_new - logpost_cur + logq_correction).
double acceptance_log_ratio(double logpost_new, double logpost_cur, double logq_correction);

struct StageSpec {
  int measurements = 0;  // likelihood evaluated on this prefix of the data
  int iterations = 0;    // accepted samples per adaptation stage
  bool operator==(const StageSpec&) const = default;
};

struct ChainConfig {
  int K = 100;    // retained samples
  int K_b = 500;  // burn-in (production phase, after staging)
  int k_d = 25;   // thinning gap
  std::vector<StageSpec> stages;
  std::uint64_t seed = 0;
  long max_proposals = 10'000'000;  // hard cap over the whole run
  int init_retries = 200;
  bool self_check = false;  // recompute the cached log-likelihood periodically

  long production_length() const {
    return static_cast<long>(K_b) + 1 + static_cast<long>(K - 1) * (k_d + 1);
  }
  bool operator==(const ChainConfig&) const = default;
};

struct StageReport {
  int measurements = 0;
  long accepted = 0;
  long proposed = 0;
  double acceptance = 0.0;
  double scale = 0.0;
};

struct ChainResult {
  std::vector<Vec> chain;        // production-phase samples, transformed coords
  std::vector<double> logpost;   // cached log posterior per chain entry
  std::vector<StageReport> stages;  // adaptation stages plus the production phase
  ProposalState proposal;        // adapted proposal used in production
  long total_proposals = 0;
};

// Keep the first K_b samples out, then take every (k_d+1)-th (0-based indices
// K_b, K_b+(k_d+1), ...). Throws if the chain is shorter than K_b + 1.
std::vector<Vec> burn_in_and_thin(const std::vector<Vec>& chain, int K_b, int k_d);
std::vector<long> thinned_indices(long chain_length, int K_b, int k_d);

// Biased normalized autocovariance estimate; acf[0] = 1. Throws on constant
// series or max_lag >= length.
std::vector<double> acf(std::span<const double> series, int max_lag);

// Effective sample size from the ACF (initial positive sequence cutoff).
double effective_sample_size(std::span<const double> series);

class ChainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Marginal Metropolis-Hastings over a problem P with
//   int dim() const;
//   int measurement_count() const;
//   double log_prior(const Vec& zeta) const;
//   double log_likelihood(const Vec& zeta, int use_measurements) const;
//   Vec draw_init(Rng&) const;
// Coordinates are the transformed ones; the proposal is symmetric there, so no
// q-correction enters the acceptance ratio. The chain records accepted samples
// only, and the production phase has exactly K_b + 1 + (K-1)(k_d+1) entries.
template <class P>
ChainResult run_chain(const P& prob, const ChainConfig& cfg, const Mat& sigma_init,
                      Rng& rng) {
  const int d = prob.dim();
  if (sigma_init.rows() != d || sigma_init.cols() != d) {
    throw std::invalid_argument("proposal covariance dimension mismatch");
  }

  ChainResult out;
  ProposalState prop;
  prop.covariance = sigma_init;
  prop.scale = 2.38 / std::sqrt(static_cast<double>(d));
  prop.refactor();

  long total_proposals = 0;
  const int m_all = prob.measurement_count();
  const int m_first = cfg.stages.empty() ? m_all : cfg.stages.front().measurements;

  // Initial point: prior draws until the posterior is finite.
  Vec zeta;
  double lp_prior = 0, lp_lik = 0;
  bool found = false;
  for (int r = 0; r < cfg.init_retries; ++r) {
    zeta = prob.draw_init(rng);
    lp_prior = prob.log_prior(zeta);
    lp_lik = prob.log_likelihood(zeta, m_first);
    if (std::isfinite(lp_prior + lp_lik)) {
      found = true;
      break;
    }
  }
  if (!found) throw ChainError("no finite-posterior initial point found");

  auto run_phase = [&](int m_used, long want_accepted, std::vector<Vec>* sink,
                       std::vector<double>* lp_sink) -> StageReport {
    StageReport rep;
    rep.measurements = m_used;
    rep.scale = prop.scale;
    long accepted = 0;
    while (accepted < want_accepted) {
      if (++total_proposals > cfg.max_proposals) {
        throw ChainError("proposal cap exceeded");
      }
      const Vec cand = propose_step(zeta, prop, rng);
      const double cand_prior = prob.log_prior(cand);
      double cand_lik = -std::numeric_limits<double>::infinity();
      if (std::isfinite(cand_prior)) cand_lik = prob.log_likelihood(cand, m_used);
      const double log_alpha =
          acceptance_log_ratio(cand_prior + cand_lik, lp_prior + lp_lik, 0.0);
      ++rep.proposed;
      if (std::log(draw_uniform(rng)) < log_alpha) {
        zeta = cand;
        lp_prior = cand_prior;
        lp_lik = cand_lik;
        ++accepted;
        if (sink) {
          sink->push_back(zeta);
          lp_sink->push_back(lp_prior + lp_lik);
        }
      }
      if (cfg.self_check && total_proposals % 97 == 0) {
        const double fresh = prob.log_likelihood(zeta, m_used);
        if (fresh != lp_lik) throw std::logic_error("stale cached log-likelihood");
      }
    }
    rep.accepted = accepted;
    rep.acceptance =
        rep.proposed > 0 ? static_cast<double>(accepted) / rep.proposed : 0.0;
    return rep;
  };

  // Adaptation stages on growing measurement prefixes.
  for (size_t s = 0; s < cfg.stages.size(); ++s) {
    const auto& stage = cfg.stages[s];
    const int m_used = std::min(stage.measurements, m_all);
    if (static_cast<int>(s) > 0 || m_used != m_first) {
      lp_lik = prob.log_likelihood(zeta, m_used);  // target changed
    }
    std::vector<Vec> stage_samples;
    std::vector<double> stage_lp;
    stage_samples.reserve(stage.iterations);
    auto rep = run_phase(m_used, stage.iterations, &stage_samples, &stage_lp);
    out.stages.push_back(rep);

    if (rep.acceptance < 0.05) prop.scale *= 0.5;
    if (stage_samples.size() >= 2) {
      const long ns = static_cast<long>(stage_samples.size());
      Vec mean = Vec::Zero(d);
      for (const auto& v : stage_samples) mean += v;
      mean /= static_cast<double>(ns);
      Mat cov = Mat::Zero(d, d);
      for (const auto& v : stage_samples) {
        const Vec c = v - mean;
        cov += c * c.transpose();
      }
      cov /= static_cast<double>(ns - 1);
      prop.covariance = 0.9 * cov + 0.1 * sigma_init;
      prop.refactor();
    }
    prop.stage = static_cast<int>(s) + 1;
  }

  // Production phase on the full dataset.
  if (!cfg.stages.empty()) lp_lik = prob.log_likelihood(zeta, m_all);
  const long want = cfg.production_length();
  out.chain.reserve(want);
  out.logpost.reserve(want);
  out.chain.push_back(zeta);
  out.logpost.push_back(lp_prior + lp_lik);
  auto rep = run_phase(m_all, want - 1, &out.chain, &out.logpost);
  rep.accepted += 1;  // the phase's starting sample counts toward the chain
  out.stages.push_back(rep);
  out.proposal = prop;
  out.total_proposals = total_proposals;
  return out;
}

// ---- Glucose instance -------------------------------------------------

// Inference problem for the minimal model: chain coordinates are
// (log p2, log p3, log n, G(-T), X(-T), I(-T)).
class GlucoseInferenceProblem {
 public:
  GlucoseInferenceProblem(Dataset data, MealSchedule schedule, TrainingInput input,
                          PriorSpec prior, IntegratorConfig integrator);

  int dim() const { return 6; }
  int measurement_count() const { return static_cast<int>(data_.times.size()); }
  double log_prior(const Vec& zeta) const;
  double log_likelihood(const Vec& zeta, int use_measurements) const;
  Vec draw_init(Rng& rng) const;

  static Vec to_chain_coords(const LatentSample& z);
  static LatentSample from_chain_coords(const Vec& zeta);

  // Initial diagonal proposal covariance: (0.05)^2 in log-parameter
  // coordinates, (prior sd / 10)^2 in state coordinates.
  Mat initial_proposal_covariance() const;

  const Dataset& data() const { return data_; }
  const PriorSpec& prior() const { return prior_; }
  const IntegratorConfig& integrator() const { return integrator_; }

  // Known training-window signals (pre-sampled on the half-step grid).
  double signal_u(double t) const;
  double signal_d(double t) const;

 private:
  Dataset data_;
  MealSchedule schedule_;
  TrainingInput input_;
  PriorSpec prior_;
  IntegratorConfig integrator_;
  // left/right limits of the known signals at each half-step grid point
  // (stage times query just inside the step, selecting the correct side of a
  // signal jump sitting on the grid)
  std::vector<double> u_left_, u_right_, d_left_, d_right_;
  double grid_dt_ = 0.25;
};

// Free-function form of the ODE-based data log-likelihood.
double log_likelihood(const LatentSample& z, const Dataset& data,
                      const GlucoseInferenceProblem& problem);

// K samples of (theta, x(0)) with provenance.
struct PosteriorSampleSet {
  std::vector<LatentSample> samples;  // x0 holds the state at t = 0
  std::vector<double> logpost;
  std::uint64_t seed = 0;
  std::string provenance;
};

// Propagate retained samples from t = -T to t = 0 under their own parameters
// and the training input (same integrator as the likelihood). Samples whose
// propagation fails are dropped with a count in `failures`.
PosteriorSampleSet map_to_t0(const std::vector<LatentSample>& samples,
                             const std::vector<double>& logpost,
                             const GlucoseInferenceProblem& problem, int* failures = nullptr);

struct InferenceResult {
  PosteriorSampleSet posterior;
  std::vector<LatentSample> production_chain;  // untransformed, at t = -T
  std::vector<double> production_logpost;
  std::vector<StageReport> stages;
  long total_proposals = 0;
};

InferenceResult run_glucose_inference(const Dataset& data, const MealSchedule& schedule,
                                      const TrainingInput& input, const PriorSpec& prior,
                                      const ChainConfig& cfg,
                                      const IntegratorConfig& integrator);

}  // namespace odeplan
