#pragma once

#include <array>

#include "odeplan/ode.hpp"
#include "odeplan/rng.hpp"

namespace odeplan {

// Minimal-model parameters. p1 is fixed at 0 for the Type 1 patient case, so
// the G_b term is inactive; it is kept for completeness.
struct BergmanParams {
  double p1 = 0.0;    // 1/min
  double p2 = 0.0;    // 1/min
  double p3 = 0.0;    // L/(mU*min^2)
  double n = 0.0;     // 1/min
  double G_b = 80.0;  // mg/dL
  double I_b = 7.0;   // mU/L
};

// State layout used throughout: x = (G [mg/dL], X [1/min], I [mU/L]).
inline constexpr int kG = 0;
inline constexpr int kX = 1;
inline constexpr int kI = 2;

struct BergmanField {
  BergmanParams p;

  static constexpr int kStateDim = 3;

  void operator()(double /*t*/, const Vec& x, double u, double D, Vec& dx) const {
    const double G = x[kG], X = x[kX], I = x[kI];
    dx[kG] = -p.p1 * (G - p.G_b) - X * G + D;
    dx[kX] = -p.p2 * X + p.p3 * (I - p.I_b);
    dx[kI] = -p.n * (I - p.I_b) + u;
  }

  void jac(double /*t*/, const Vec& x, double /*u*/, double /*D*/, Mat& A, Vec& B) const {
    A(0, 0) = -p.p1 - x[kX];
    A(0, 1) = -x[kG];
    A(0, 2) = 0.0;
    A(1, 0) = 0.0;
    A(1, 1) = -p.p2;
    A(1, 2) = p.p3;
    A(2, 0) = 0.0;
    A(2, 1) = 0.0;
    A(2, 2) = -p.n;
    B[0] = 0.0;
    B[1] = 0.0;
    B[2] = 1.0;
  }
};

// Derivative of the state under the minimal model (pure arithmetic form of the
// vector field, without the signal plumbing).
Eigen::Vector3d bergman_rhs(const Eigen::Vector3d& state, double u, double D,
                            const BergmanParams& p);

// Meal glucose appearance: each meal contributes S*B*exp(-B(t-t_meal)) from its
// meal time onward.
struct MealSchedule {
  struct Meal {
    double time;  // minutes
    double size;  // mg/dL
    bool operator==(const Meal&) const = default;
  };
  std::vector<Meal> meals;
  double decay = 0.5;  // B, 1/min

  static MealSchedule study_defaults();
  bool operator==(const MealSchedule&) const = default;
};

double meal_rate(const MealSchedule& schedule, double t);

// Training-period insulin dosing: each meal triggers gain*S/60 mU/min over the
// hour following the meal, so the total dose per meal is gain*S.
struct TrainingInput {
  MealSchedule schedule;
  double gain = 7.0;  // mU*dL/(mg*min)-scaled constant, calibrated in config

  double operator()(double t) const;
};

struct LogNormalPrior {
  double mu_log = 0.0;
  double sigma_log = 1.0;
  bool operator==(const LogNormalPrior&) const = default;
};
struct GaussianPrior {
  double mean = 0.0;
  double sd = 1.0;
  bool operator==(const GaussianPrior&) const = default;
};

// Independent priors: lognormal on (p2, p3, n), Gaussian on the training-window
// initial state (G, X, I).
struct PriorSpec {
  std::array<LogNormalPrior, 3> theta;
  std::array<GaussianPrior, 3> state;

  static PriorSpec study_defaults();
  bool operator==(const PriorSpec&) const = default;
};

// One hypothesis about parameters and the training-window initial state:
// theta = (p2, p3, n), x0 = x(-T).
struct LatentSample {
  Eigen::Vector3d theta;
  Eigen::Vector3d x0;
};

BergmanParams params_from_theta(const Eigen::Vector3d& theta);

// Baseline parameter point: the prior medians exp(mu_log).
BergmanParams nominal_params(const PriorSpec& prior);

LatentSample sample_prior(const PriorSpec& prior, Rng& rng);

// Log prior density of (theta, x(-T)); -inf outside the lognormal support.
double prior_logdensity(const LatentSample& z, const PriorSpec& prior);

// Noisy glucose measurements on the training window plus the known input
// context needed to reproduce the latent trajectory.
struct Dataset {
  double t_begin = -720.0;      // -T, minutes
  std::vector<double> times;    // sorted, in [t_begin, 0]
  std::vector<double> values;   // y_m, mg/dL
  double noise_sigma = 8.0;     // mg/dL
};

// Ground-truth trajectory on the training window, recorded every record_dt
// minutes (Tsitouras 5/4 at step h_truth).
Trajectory simulate_truth_training(const LatentSample& z, const MealSchedule& schedule,
                                   const TrainingInput& input, double T, double h_truth,
                                   double record_dt = 0.5);

// M measurement times uniform on [-T, 0], sorted and snapped to the record
// grid; outputs are the true glucose plus N(0, sigma^2) noise.
Dataset sample_measurements(const Trajectory& truth, double t_begin, int M, double sigma,
                            Rng& rng);

Dataset generate_dataset(const LatentSample& z, const MealSchedule& schedule,
                         const TrainingInput& input, int M, double sigma, double T,
                         double h_truth, Rng& rng);

}  // namespace odeplan
