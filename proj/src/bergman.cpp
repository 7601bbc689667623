#include "odeplan/bergman.hpp"

#include <algorithm>
#include <cmath>

namespace odeplan {

Eigen::Vector3d bergman_rhs(const Eigen::Vector3d& state, double u, double D,
                            const BergmanParams& p) {
  const double G = state[kG], X = state[kX], I = state[kI];
  return {-p.p1 * (G - p.G_b) - X * G + D, -p.p2 * X + p.p3 * (I - p.I_b),
          -p.n * (I - p.I_b) + u};
}

MealSchedule MealSchedule::study_defaults() {
  // 8 am, 1 pm, 7 pm on the clock where t = 0 is 6 pm.
  return MealSchedule{{{-600.0, 60.0}, {-300.0, 90.0}, {60.0, 80.0}}, 0.5};
}

double meal_rate(const MealSchedule& schedule, double t) {
  double D = 0.0;
  for (const auto& meal : schedule.meals) {
    if (t >= meal.time) {
      D += meal.size * schedule.decay * std::exp(-schedule.decay * (t - meal.time));
    }
  }
  return D;
}

double TrainingInput::operator()(double t) const {
  double u = 0.0;
  for (const auto& meal : schedule.meals) {
    if (t >= meal.time && t < meal.time + 60.0) {
      u += gain * meal.size / 60.0;
    }
  }
  return u;
}

PriorSpec PriorSpec::study_defaults() {
  PriorSpec prior;
  prior.theta = {LogNormalPrior{-4.26, 0.18}, LogNormalPrior{-13.27, 0.28},
                 LogNormalPrior{-1.66, 0.23}};
  prior.state = {GaussianPrior{80.0, 8.0}, GaussianPrior{0.0, 0.001},
                 GaussianPrior{7.0, 2.0}};
  return prior;
}

BergmanParams params_from_theta(const Eigen::Vector3d& theta) {
  BergmanParams p;
  p.p1 = 0.0;
  p.p2 = theta[0];
  p.p3 = theta[1];
  p.n = theta[2];
  return p;
}

BergmanParams nominal_params(const PriorSpec& prior) {
  Eigen::Vector3d theta{std::exp(prior.theta[0].mu_log), std::exp(prior.theta[1].mu_log),
                        std::exp(prior.theta[2].mu_log)};
  return params_from_theta(theta);
}

LatentSample sample_prior(const PriorSpec& prior, Rng& rng) {
  LatentSample z;
  for (int i = 0; i < 3; ++i) {
    z.theta[i] = std::exp(prior.theta[i].mu_log + prior.theta[i].sigma_log * draw_normal(rng));
  }
  for (int i = 0; i < 3; ++i) {
    z.x0[i] = prior.state[i].mean + prior.state[i].sd * draw_normal(rng);
  }
  return z;
}

namespace {
constexpr double kLogSqrt2Pi = 0.9189385332046727;

double gaussian_logpdf(double x, double mean, double sd) {
  const double r = (x - mean) / sd;
  return -std::log(sd) - kLogSqrt2Pi - 0.5 * r * r;
}
}  // namespace

double prior_logdensity(const LatentSample& z, const PriorSpec& prior) {
  double lp = 0.0;
  for (int i = 0; i < 3; ++i) {
    if (!(z.theta[i] > 0.0)) return -std::numeric_limits<double>::infinity();
    // lognormal: gaussian density of log theta minus the log-Jacobian
    lp += gaussian_logpdf(std::log(z.theta[i]), prior.theta[i].mu_log,
                          prior.theta[i].sigma_log) -
          std::log(z.theta[i]);
  }
  for (int i = 0; i < 3; ++i) {
    lp += gaussian_logpdf(z.x0[i], prior.state[i].mean, prior.state[i].sd);
  }
  return lp;
}

Trajectory simulate_truth_training(const LatentSample& z, const MealSchedule& schedule,
                                   const TrainingInput& input, double T, double h_truth,
                                   double record_dt) {
  const BergmanField field{params_from_theta(z.theta)};
  auto disturb = [&schedule](double t) { return meal_rate(schedule, t); };
  const auto record = sample_times(-T, 0.0, record_dt);
  return tsit54_integrate(field, Vec(z.x0), input, disturb, -T, 0.0, h_truth, record);
}

Dataset sample_measurements(const Trajectory& truth, double t_begin, int M, double sigma,
                            Rng& rng) {
  if (M < 1) throw std::invalid_argument("need at least one measurement");
  const double t_end = truth.times.back();
  const double dt = truth.times[1] - truth.times[0];

  std::vector<double> raw(M);
  for (int m = 0; m < M; ++m) {
    raw[m] = t_begin + draw_uniform(rng) * (t_end - t_begin);
  }
  std::sort(raw.begin(), raw.end());

  Dataset data;
  data.t_begin = t_begin;
  data.noise_sigma = sigma;
  data.times.resize(M);
  data.values.resize(M);
  const long last = static_cast<long>(truth.times.size()) - 1;
  for (int m = 0; m < M; ++m) {
    const long idx = std::clamp(snap_to_grid(t_begin, raw[m], dt), 0L, last);
    data.times[m] = truth.times[idx];
    data.values[m] = truth.states[idx][kG] + sigma * draw_normal(rng);
  }
  return data;
}

Dataset generate_dataset(const LatentSample& z, const MealSchedule& schedule,
                         const TrainingInput& input, int M, double sigma, double T,
                         double h_truth, Rng& rng) {
  const auto truth = simulate_truth_training(z, schedule, input, T, h_truth);
  return sample_measurements(truth, -T, M, sigma, rng);
}

}  // namespace odeplan
