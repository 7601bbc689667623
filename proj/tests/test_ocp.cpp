#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "odeplan/ocp.hpp"
#include "odeplan/rng.hpp"

using namespace odeplan;

namespace {

// Model with frozen states (zero dynamics): G stays at the initial value.
struct FrozenModel {
  std::vector<Vec> x0s;

  struct Field {
    void operator()(double, const Vec&, double, double, Vec& dx) const { dx.setZero(); }
    void jac(double, const Vec&, double, double, Mat& A, Vec& B) const {
      A.setZero();
      B.setZero();
    }
  };
  int count() const { return static_cast<int>(x0s.size()); }
  int state_dim() const { return 3; }
  Field field(int) const { return {}; }
  Vec initial_state(int k) const { return x0s[k]; }
  double disturbance(double) const { return 0.0; }
};

// Scalar linear system xdot = a x + b u.
struct LinearModel {
  double a = -0.05, b = 1.0;
  Vec x0 = Vec::Constant(1, 1.0);
  int scenarios = 1;

  struct Field {
    double a, b;
    void operator()(double, const Vec& x, double u, double, Vec& dx) const {
      dx[0] = a * x[0] + b * u;
    }
    void jac(double, const Vec&, double, double, Mat& A, Vec& B) const {
      A(0, 0) = a;
      B[0] = b;
    }
  };
  int count() const { return scenarios; }
  int state_dim() const { return 1; }
  Field field(int) const { return {a, b}; }
  Vec initial_state(int) const { return x0; }
  double disturbance(double) const { return 0.0; }
};

OcpSpec scalar_lq_spec(double q, double r, double qf, double lo = -1e9, double hi = 1e9) {
  OcpSpec spec;
  spec.running_cost = [q, r](double u, const Vec& x, double) {
    return q * x[0] * x[0] + r * u * u;
  };
  spec.running_cost_grad = [q, r](double u, const Vec& x, double, double& du, Vec& dx) {
    du = 2 * r * u;
    dx[0] = 2 * q * x[0];
  };
  spec.terminal_cost = [qf](const Vec& x) { return qf * x[0] * x[0]; };
  spec.terminal_cost_grad = [qf](const Vec& x, Vec& dx) { dx[0] = 2 * qf * x[0]; };
  spec.n_ineq = 0;
  spec.u_min = lo;
  spec.u_max = hi;
  return spec;
}

BergmanScenarioModel random_glucose_model(int K, Rng& rng, const ControlGrid& grid,
                                          double step) {
  const auto prior = PriorSpec::study_defaults();
  MealSchedule meals;
  meals.meals = {{60.0, 80.0}};
  std::vector<Scenario> scen;
  for (int k = 0; k < K; ++k) {
    const auto z = sample_prior(prior, rng);
    Scenario sc;
    sc.theta = z.theta;
    sc.x0 = {90.0 + 40.0 * draw_uniform(rng), 1e-4 * draw_uniform(rng),
             7.0 + 3.0 * draw_uniform(rng)};
    sc.index = k;
    scen.push_back(sc);
  }
  return BergmanScenarioModel(std::move(scen), meals, grid, step);
}

}  // namespace

TEST_CASE("rollout: zero dynamics keeps all nodes at x0 and matches the recursion") {
  FrozenModel model;
  Vec x0(3);
  x0 << 90.0, 0.0, 7.0;
  model.x0s = {x0};
  const auto grid = ControlGrid::uniform(0.0, 10.0, 2);
  Eigen::VectorXd u(2);
  u << 5.0, 3.0;
  const auto xs = rollout(model, 0, u, grid, 0.5);
  REQUIRE(xs.size() == 3);
  for (const auto& x : xs) CHECK(x == x0);
}

TEST_CASE("scenario_cost: hand-computed two-node instance") {
  FrozenModel model;
  Vec x0(3);
  x0 << 90.0, 0.0, 7.0;
  model.x0s = {x0};
  const auto grid = ControlGrid::uniform(0.0, 5.0, 1);
  Eigen::VectorXd u(1);
  u << 5.0;
  const auto spec = glucose_ocp_spec();
  const double j = scenario_cost(u, model, grid, spec, 0.5);
  // (1/1) [ 10*(90-80)^2 + (1*(90-80)^2 + 1e-4*25)*5 ] = 1500.0125
  CHECK(j == doctest::Approx(1500.0125).epsilon(1e-14));
}

TEST_CASE("scenario_cost: averaging invariances") {
  FrozenModel one;
  Vec x0(3);
  x0 << 100.0, 0.0, 7.0;
  one.x0s = {x0};
  FrozenModel four;
  four.x0s = {x0, x0, x0, x0};
  const auto grid = ControlGrid::uniform(0.0, 30.0, 6);
  Eigen::VectorXd u(6);
  u << 1, 2, 3, 4, 5, 6;
  const auto spec = glucose_ocp_spec();
  CHECK(scenario_cost(u, one, grid, spec, 0.5) ==
        scenario_cost(u, four, grid, spec, 0.5));

  FrozenModel at_ref;
  Vec xr(3);
  xr << 80.0, 0.0, 7.0;
  at_ref.x0s = {xr};
  CHECK(scenario_cost(Eigen::VectorXd::Zero(6), at_ref, grid, spec, 0.5) == 0.0);
}

TEST_CASE("constraint_residuals: interior, boundary, violated") {
  const auto grid = ControlGrid::uniform(0.0, 10.0, 2);
  const auto spec = glucose_ocp_spec();
  Eigen::VectorXd u = Eigen::VectorXd::Zero(2);

  FrozenModel model;
  Vec a(3), b2(3), c(3);
  a << 100.0, 0.0, 7.0;
  b2 << 70.0, 0.0, 7.0;
  c << 185.0, 0.0, 7.0;
  model.x0s = {a, b2, c};
  const Vec r = constraint_residuals(u, model, grid, spec, 0.5);
  REQUIRE(r.size() == 3 * 3 * 2);  // K * (N+1) * 2
  // scenario 0 (G=100): all rows <= -20
  for (int i = 0; i < 6; ++i) CHECK(r[i] <= -20.0);
  // scenario 1 (G=70): lower bound active at 0
  CHECK(r[6] == 0.0);
  // scenario 2 (G=185): upper bound violated by 5
  CHECK(r[13] == doctest::Approx(5.0).epsilon(1e-14));
}

TEST_CASE("cost_and_gradient: decoupled quadratic input term") {
  FrozenModel model;
  Vec x0(3);
  x0 << 80.0, 0.0, 7.0;
  model.x0s = {x0};
  const auto grid = ControlGrid::uniform(0.0, 30.0, 6);
  GlucoseOcpWeights w;
  w.W_G = 0.0;
  w.W_Gf = 0.0;
  const auto spec = glucose_ocp_spec(w);
  Eigen::VectorXd u(6);
  u << 1, -2, 3, 0.5, 4, 2;
  auto [val, grad] = cost_and_gradient(u, model, grid, spec, 0.5, nullptr);
  for (int n = 0; n < 6; ++n) {
    CHECK(grad[n] == doctest::Approx(2.0 * w.W_U * u[n] * grid.delta(n)).epsilon(1e-14));
  }
  CHECK(val == doctest::Approx(w.W_U * u.squaredNorm() * 5.0).epsilon(1e-12));
}

TEST_CASE("cost_and_gradient: duplicated scenario set gives the identical gradient") {
  Rng rng(11);
  const auto grid = ControlGrid::uniform(0.0, 60.0, 12);
  auto model1 = random_glucose_model(3, rng, grid, 0.5);
  std::vector<Scenario> twice = model1.scenarios();
  for (const auto& s : model1.scenarios()) twice.push_back(s);
  MealSchedule meals;
  meals.meals = {{60.0, 80.0}};
  BergmanScenarioModel model2(twice, meals, grid, 0.5);

  Eigen::VectorXd u(12);
  for (int i = 0; i < 12; ++i) u[i] = 10.0 * draw_uniform(rng);
  const auto spec = glucose_ocp_spec();
  auto [v1, g1] = cost_and_gradient(u, model1, grid, spec, 0.5, nullptr);
  auto [v2, g2] = cost_and_gradient(u, model2, grid, spec, 0.5, nullptr);
  CHECK(v1 == doctest::Approx(v2).epsilon(1e-14));
  for (int n = 0; n < 12; ++n) CHECK(g1[n] == doctest::Approx(g2[n]).epsilon(1e-13));
}

TEST_CASE("cost_and_gradient matches central finite differences (with AL terms)") {
  Rng rng(2024);
  const auto grid = ControlGrid::uniform(0.0, 60.0, 12);
  const auto spec = glucose_ocp_spec();
  for (int trial = 0; trial < 2; ++trial) {
    auto model = random_glucose_model(3, rng, grid, 0.5);
    Eigen::VectorXd u(12);
    for (int i = 0; i < 12; ++i) u[i] = 8.0 * draw_uniform(rng);

    AugLagState al;
    al.rho = 25.0;
    al.lambda = Vec::Zero(3 * 13 * 2);
    for (Eigen::Index i = 0; i < al.lambda.size(); ++i) {
      al.lambda[i] = draw_uniform(rng);
    }

    auto [val, grad] = cost_and_gradient(u, model, grid, spec, 0.5, &al);
    const double delta = 1e-4;
    double max_rel = 0.0;
    for (int n = 0; n < 12; ++n) {
      Eigen::VectorXd up = u, um = u;
      up[n] += delta;
      um[n] -= delta;
      const double fp = cost_and_gradient(up, model, grid, spec, 0.5, &al).first;
      const double fm = cost_and_gradient(um, model, grid, spec, 0.5, &al).first;
      const double fd = (fp - fm) / (2 * delta);
      const double rel = std::abs(fd - grad[n]) / std::max(1.0, std::abs(fd));
      max_rel = std::max(max_rel, rel);
    }
    CHECK(max_rel < 1e-4);
  }
}

TEST_CASE("solve_ocp: zero-weight objective returns the feasible start unchanged") {
  FrozenModel model;
  Vec x0(3);
  x0 << 100.0, 0.0, 7.0;
  model.x0s = {x0};
  const auto grid = ControlGrid::uniform(0.0, 30.0, 6);
  GlucoseOcpWeights w;
  w.W_G = w.W_Gf = w.W_U = 0.0;
  const auto spec = glucose_ocp_spec(w);
  Eigen::VectorXd u0(6);
  u0 << 1, 2, 3, 4, 5, 6;
  auto [traj, rep] = solve_ocp(model, grid, spec, 0.5, {}, u0);
  CHECK(rep.success);
  CHECK(traj.values == u0);
  CHECK(rep.max_violation == 0.0);
}

TEST_CASE("solve_ocp matches the discrete Riccati solution on a scalar LQ problem") {
  LinearModel model;
  model.a = -0.08;
  model.b = 0.5;
  model.x0[0] = 2.0;
  const int N = 20;
  const double dt = 1.0, h = 0.5;
  const auto grid = ControlGrid::uniform(0.0, N * dt, N);
  const double q = 1.0, r = 0.1, qf = 5.0;
  const auto spec = scalar_lq_spec(q, r, qf);

  SolverConfig cfg;
  cfg.tol_pg = 1e-12;
  cfg.max_inner = 2000;
  auto [traj, rep] = solve_ocp(model, grid, spec, h, cfg, Eigen::VectorXd::Zero(N));
  CHECK(rep.success);

  // oracle: exact discretization A_d, B_d computed from first principles by
  // marching the RK4 recursion on basis inputs, then a Riccati backward pass
  double A_d = 1.0, B_d = 0.0;
  {
    // two RK4 substeps per interval on xdot = a x + b u
    auto step = [&](double x, double u) {
      const double k1 = model.a * x + model.b * u;
      const double k2 = model.a * (x + h / 2 * k1) + model.b * u;
      const double k3 = model.a * (x + h / 2 * k2) + model.b * u;
      const double k4 = model.a * (x + h * k3) + model.b * u;
      return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    };
    double xa = 1.0, xb = 0.0;
    for (int i = 0; i < 2; ++i) xa = step(xa, 0.0);
    for (int i = 0; i < 2; ++i) xb = step(xb, 1.0);
    A_d = xa;
    B_d = xb;
  }
  // value V_n(x) = P_n x^2; cost sum_n (q x_n^2 + r u_n^2) dt + qf x_N^2
  double P = qf;
  std::vector<double> Ks(N);
  for (int n = N - 1; n >= 0; --n) {
    const double Ru = r * dt + P * B_d * B_d;
    const double Kn = P * A_d * B_d / Ru;
    Ks[n] = Kn;
    P = q * dt + P * A_d * A_d - Ru * Kn * Kn;
  }
  double x = model.x0[0];
  double jstar = 0.0;
  for (int n = 0; n < N; ++n) {
    const double u = -Ks[n] * x;
    jstar += (q * x * x + r * u * u) * dt;
    x = A_d * x + B_d * u;
  }
  jstar += qf * x * x;

  CHECK(std::abs(rep.cost - jstar) / jstar < 1e-3);
}

TEST_CASE("solve_ocp: glucose instance with one nominal scenario is node-feasible") {
  const auto prior = PriorSpec::study_defaults();
  MealSchedule meals;
  meals.meals = {{60.0, 80.0}};
  Scenario sc;
  const auto nom = nominal_params(prior);
  sc.theta = {nom.p2, nom.p3, nom.n};
  sc.x0 = {130.0, 1e-4, 7.0};
  const auto grid = ControlGrid::uniform(0.0, 360.0, 72);
  BergmanScenarioModel model({sc}, meals, grid, 0.5);
  const auto spec = glucose_ocp_spec();

  auto [traj, rep] = solve_ocp(model, grid, spec, 0.5, {}, Eigen::VectorXd::Zero(72));
  CHECK(rep.success);
  CHECK(rep.max_violation <= 1e-6);
  for (int n = 0; n < 72; ++n) {
    CHECK(traj.values[n] >= spec.u_min);
    CHECK(traj.values[n] <= spec.u_max);
  }
  // feasibility on the solver's own rollout
  const auto xs = rollout(model, 0, traj.values, grid, 0.5);
  for (const auto& s : xs) {
    CHECK(s[kG] >= 70.0 - 1e-6);
    CHECK(s[kG] <= 180.0 + 1e-6);
  }
  // merit is non-increasing across accepted inner iterations of each phase
  for (const auto& phase : rep.merit_trace) {
    for (size_t i = 1; i < phase.size(); ++i) CHECK(phase[i] <= phase[i - 1] + 1e-12);
  }
}

TEST_CASE("scenario monotonicity: adding a scenario cannot improve the restricted cost") {
  Rng rng(5);
  const auto grid = ControlGrid::uniform(0.0, 120.0, 24);
  MealSchedule meals;
  meals.meals = {{60.0, 80.0}};
  auto base = random_glucose_model(3, rng, grid, 0.5);
  auto extra_model = random_glucose_model(1, rng, grid, 0.5);
  std::vector<Scenario> plus = base.scenarios();
  plus.push_back(extra_model.scenarios()[0]);
  BergmanScenarioModel bigger(plus, meals, grid, 0.5);
  const auto spec = glucose_ocp_spec();

  SolverConfig cfg;
  auto [u3, rep3] = solve_ocp(base, grid, spec, 0.5, cfg, Eigen::VectorXd::Zero(24));
  auto [u4, rep4] = solve_ocp(bigger, grid, spec, 0.5, cfg, Eigen::VectorXd::Zero(24));
  REQUIRE(rep3.success);
  REQUIRE(rep4.success);

  // u4 is feasible for the 3-scenario constraints (subset), so the 3-scenario
  // optimum cannot be worse than the 3-scenario evaluation of u4
  const Vec r = constraint_residuals(u4.values, base, grid, spec, 0.5);
  CHECK(r.maxCoeff() <= 1e-6);
  const double j3_at_u4 = scenario_cost(u4.values, base, grid, spec, 0.5);
  CHECK(rep3.cost <= j3_at_u4 + 1e-6 * std::max(1.0, std::abs(j3_at_u4)));
}

TEST_CASE("propagate_with_sensitivities is exposed with the rollout states") {
  Rng rng(8);
  const auto grid = ControlGrid::uniform(0.0, 30.0, 6);
  auto model = random_glucose_model(1, rng, grid, 0.5);
  Eigen::VectorXd u(6);
  for (int i = 0; i < 6; ++i) u[i] = 5.0 * draw_uniform(rng);
  auto d = [&model](double t) { return model.disturbance(t); };
  auto [states, sens] = propagate_with_sensitivities(model.field(0), model.initial_state(0),
                                                     grid, u, d, 0.5);
  const auto xs = rollout(model, 0, u, grid, 0.5);
  REQUIRE(states.size() == xs.size());
  for (size_t i = 0; i < xs.size(); ++i) CHECK(states[i] == xs[i]);
  // lower-triangular structure in the control index
  for (int k = 0; k <= 6; ++k) {
    for (int n = k; n < 6; ++n) CHECK(sens[k].col(n).isZero(0.0));
  }
}
