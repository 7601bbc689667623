#pragma once

#include <functional>
#include <string>

#include "odeplan/bergman.hpp"
#include "odeplan/sensitivity.hpp"

namespace odeplan {

// One posterior sample (theta, x(0)) interpreted as a plausible system
// realization for planning.
struct Scenario {
  Eigen::Vector3d theta;
  Eigen::Vector3d x0;
  int index = 0;
};

// Cost and pointwise inequality structure of the OCP. Inequalities h(x, t) <= 0
// are enforced at grid nodes for every scenario; the input box is handled by
// projection in the solver.
struct OcpSpec {
  std::function<double(double u, const Vec& x, double t)> running_cost;
  std::function<void(double u, const Vec& x, double t, double& dc_du, Vec& dc_dx)>
      running_cost_grad;
  std::function<double(const Vec& x)> terminal_cost;
  std::function<void(const Vec& x, Vec& dcf_dx)> terminal_cost_grad;
  int n_ineq = 0;
  std::function<void(const Vec& x, double t, Vec& h)> ineq;
  std::function<void(const Vec& x, double t, Mat& dh_dx)> ineq_jac;
  double u_min = 0.0;
  double u_max = 20.0;
};

// Glucose instance: c = W_G (G - G_ref)^2 + W_U u^2, c_f = W_Gf (G - G_ref)^2,
// h = [G_lo - G, G - G_hi].
struct GlucoseOcpWeights {
  double W_G = 1.0;
  double W_Gf = 10.0;
  double W_U = 1e-4;
  double G_ref = 80.0;
  double G_lo = 70.0;
  double G_hi = 180.0;
  double u_min = 0.0;
  double u_max = 20.0;
  bool operator==(const GlucoseOcpWeights&) const = default;
};

OcpSpec glucose_ocp_spec(const GlucoseOcpWeights& w = {});

// Scenario set for the glucose problem; the meal disturbance over the horizon
// is pre-sampled on the half-step grid.
class BergmanScenarioModel {
 public:
  BergmanScenarioModel(std::vector<Scenario> scenarios, MealSchedule meals,
                       const ControlGrid& grid, double step);

  int count() const { return static_cast<int>(scenarios_.size()); }
  int state_dim() const { return 3; }
  BergmanField field(int k) const { return BergmanField{params_from_theta(scenarios_[k].theta)}; }
  Vec initial_state(int k) const { return scenarios_[k].x0; }
  double disturbance(double t) const;
  const std::vector<Scenario>& scenarios() const { return scenarios_; }

 private:
  std::vector<Scenario> scenarios_;
  MealSchedule meals_;
  double t0_ = 0.0, dt_ = 0.25;
  std::vector<double> d_left_, d_right_;  // one-sided limits per half-step point
};

// Multipliers and penalty of the augmented Lagrangian over the stacked node
// constraints (scenario-major, then node, then constraint row).
struct AugLagState {
  Vec lambda;
  double rho = 10.0;
};

struct SolverConfig {
  int max_outer = 30;
  int max_inner = 400;
  double tol_feasibility = 1e-6;
  double tol_pg = 1e-7;  // projected-gradient norm, relative to the initial one
  double rho_init = 10.0;
  double rho_max = 1e8;
  int lbfgs_memory = 10;
  double armijo_c = 1e-4;
  int max_linesearch = 50;
  bool operator==(const SolverConfig&) const = default;
};

struct SolveReport {
  bool success = false;
  double cost = 0.0;           // plain scenario cost at the returned point
  double max_violation = 0.0;  // hard node-constraint residual, positive part
  int outer_iterations = 0;
  long inner_iterations = 0;
  long evaluations = 0;
  std::string message;
  // augmented objective after each accepted inner step, one series per outer
  // phase (non-increasing within a phase)
  std::vector<std::vector<double>> merit_trace;
};

namespace detail {

inline double al_penalty(double g, double lambda, double rho) {
  const double t = std::max(0.0, lambda + rho * g);
  return (t * t - lambda * lambda) / (2.0 * rho);
}

inline double al_penalty_slope(double g, double lambda, double rho) {
  return std::max(0.0, lambda + rho * g);
}

}  // namespace detail

// States x_0..x_N of one scenario under the candidate input.
template <class Model>
std::vector<Vec> rollout(const Model& model, int k, const Eigen::VectorXd& u,
                         const ControlGrid& grid, double step) {
  auto d = [&model](double t) { return model.disturbance(t); };
  try {
    return rollout_linearized(model.field(k), model.initial_state(k), grid, u, d, step,
                              /*with_jacobians=*/false)
        .states;
  } catch (const IntegrationFailure& e) {
    throw std::runtime_error("scenario " + std::to_string(k) +
                             " rollout failed at t=" + std::to_string(e.time()));
  }
}

// Scenario-averaged discrete cost: (1/K) sum_k [ c_f(x_N^k) + sum_n c(u_n,
// x_n^k, tau_n) Delta_n ].
template <class Model>
double scenario_cost(const Eigen::VectorXd& u, const Model& model, const ControlGrid& grid,
                     const OcpSpec& spec, double step) {
  const int K = model.count();
  const int N = grid.intervals();
  double total = 0.0;
  for (int k = 0; k < K; ++k) {
    const auto xs = rollout(model, k, u, grid, step);
    double jk = spec.terminal_cost(xs[N]);
    for (int n = 0; n < N; ++n) {
      jk += spec.running_cost(u[n], xs[n], grid.nodes[n]) * grid.delta(n);
    }
    total += jk;
  }
  return total / K;
}

// Stacked node-constraint residuals (<= 0 feasible), ordered scenario-major,
// node, constraint row.
template <class Model>
Vec constraint_residuals(const Eigen::VectorXd& u, const Model& model,
                         const ControlGrid& grid, const OcpSpec& spec, double step) {
  const int K = model.count();
  const int N = grid.intervals();
  Vec out(static_cast<Eigen::Index>(K) * (N + 1) * spec.n_ineq);
  if (spec.n_ineq == 0) return out;
  Vec h(spec.n_ineq);
  Eigen::Index at = 0;
  for (int k = 0; k < K; ++k) {
    const auto xs = rollout(model, k, u, grid, step);
    for (int n = 0; n <= N; ++n) {
      spec.ineq(xs[n], grid.nodes[n], h);
      out.segment(at, spec.n_ineq) = h;
      at += spec.n_ineq;
    }
  }
  return out;
}

// Value and exact gradient of the scenario cost, optionally augmented with the
// AL terms, via one adjoint sweep per scenario through the interval Jacobians.
template <class Model>
std::pair<double, Eigen::VectorXd> cost_and_gradient(const Eigen::VectorXd& u,
                                                     const Model& model,
                                                     const ControlGrid& grid,
                                                     const OcpSpec& spec, double step,
                                                     const AugLagState* al) {
  const int K = model.count();
  const int N = grid.intervals();
  const int nx = model.state_dim();
  const int ni = spec.n_ineq;
  auto d = [&model](double t) { return model.disturbance(t); };

  double value = 0.0;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(N);
  Vec a(nx), dc_dx(nx), dcf_dx(nx), h(std::max(ni, 1));
  Mat dh_dx(std::max(ni, 1), nx);

  for (int k = 0; k < K; ++k) {
    LinearizedRollout roll;
    try {
      roll = rollout_linearized(model.field(k), model.initial_state(k), grid, u, d, step,
                                /*with_jacobians=*/true);
    } catch (const IntegrationFailure& e) {
      throw std::runtime_error("scenario " + std::to_string(k) +
                               " rollout failed at t=" + std::to_string(e.time()));
    }
    const auto& xs = roll.states;
    const double wk = 1.0 / K;

    auto al_terms = [&](int n, double& val, Vec* slope) {
      if (!al || ni == 0) return;
      spec.ineq(xs[n], grid.nodes[n], h);
      const Eigen::Index base = (static_cast<Eigen::Index>(k) * (N + 1) + n) * ni;
      if (slope) spec.ineq_jac(xs[n], grid.nodes[n], dh_dx);
      for (int i = 0; i < ni; ++i) {
        val += detail::al_penalty(h[i], al->lambda[base + i], al->rho);
        if (slope) {
          const double s = detail::al_penalty_slope(h[i], al->lambda[base + i], al->rho);
          if (s != 0.0) *slope += s * dh_dx.row(i).transpose();
        }
      }
    };

    // terminal node
    value += wk * spec.terminal_cost(xs[N]);
    spec.terminal_cost_grad(xs[N], dcf_dx);
    a = wk * dcf_dx;
    {
      double al_val = 0.0;
      Vec slope = Vec::Zero(nx);
      al_terms(N, al_val, &slope);
      value += al_val;
      a += slope;
    }

    for (int n = N - 1; n >= 0; --n) {
      const double dn = grid.delta(n);
      value += wk * spec.running_cost(u[n], xs[n], grid.nodes[n]) * dn;
      double dc_du = 0.0;
      spec.running_cost_grad(u[n], xs[n], grid.nodes[n], dc_du, dc_dx);
      grad[n] += wk * dc_du * dn + roll.input_jac[n].dot(a);
      Vec anew = roll.step_jac[n].transpose() * a + wk * dn * dc_dx;
      double al_val = 0.0;
      if (n > 0) {
        Vec slope = Vec::Zero(nx);
        al_terms(n, al_val, &slope);
        anew += slope;
      } else {
        al_terms(0, al_val, nullptr);  // constant in u, value only
      }
      value += al_val;
      a = anew;
    }
  }
  return {value, grad};
}

// Augmented-Lagrangian outer loop over the node constraints with a projected
// L-BFGS inner solve for the box-constrained input.
template <class Model>
std::pair<ControlTrajectory, SolveReport> solve_ocp(const Model& model,
                                                    const ControlGrid& grid,
                                                    const OcpSpec& spec, double step,
                                                    const SolverConfig& cfg,
                                                    const Eigen::VectorXd& u_init) {
  const int N = grid.intervals();
  const int K = model.count();
  if (K < 1) throw std::invalid_argument("need at least one scenario");

  auto project = [&](Eigen::VectorXd v) {
    for (int i = 0; i < N; ++i) v[i] = std::clamp(v[i], spec.u_min, spec.u_max);
    return v;
  };

  SolveReport rep;
  AugLagState al;
  al.lambda = Vec::Zero(static_cast<Eigen::Index>(K) * (N + 1) * spec.n_ineq);
  al.rho = cfg.rho_init;

  Eigen::VectorXd u = project(u_init);
  auto eval = [&](const Eigen::VectorXd& v) {
    ++rep.evaluations;
    return cost_and_gradient(v, model, grid, spec, step, &al);
  };

  auto hard_violation = [&](const Eigen::VectorXd& v) {
    if (spec.n_ineq == 0) return std::pair<double, Vec>(0.0, Vec());
    Vec g = constraint_residuals(v, model, grid, spec, step);
    return std::pair<double, Vec>(std::max(0.0, g.maxCoeff()), std::move(g));
  };

  // best-so-far iterate by (violation, cost)
  Eigen::VectorXd u_best = u;
  double best_viol = std::numeric_limits<double>::infinity();
  double best_cost = std::numeric_limits<double>::infinity();

  auto projected_gradient = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& g) {
    Eigen::VectorXd pg = g;
    for (int i = 0; i < N; ++i) {
      if ((v[i] <= spec.u_min && g[i] > 0) || (v[i] >= spec.u_max && g[i] < 0)) pg[i] = 0;
    }
    return pg;
  };

  double prev_viol = std::numeric_limits<double>::infinity();
  bool inner_converged = false;

  for (int outer = 0; outer < cfg.max_outer; ++outer) {
    rep.outer_iterations = outer + 1;

    // ---- inner: projected L-BFGS on the augmented objective ----
    auto [f, g] = eval(u);
    if (!std::isfinite(f)) throw std::runtime_error("non-finite augmented cost");
    std::vector<Eigen::VectorXd> mem_s, mem_y;
    rep.merit_trace.emplace_back();
    rep.merit_trace.back().push_back(f);
    inner_converged = false;
    double pg0_norm = -1.0;  // reference for this phase
    for (int it = 0; it < cfg.max_inner; ++it) {
      ++rep.inner_iterations;
      Eigen::VectorXd pg = projected_gradient(u, g);
      const double pg_norm = pg.lpNorm<Eigen::Infinity>();
      if (pg0_norm < 0) pg0_norm = std::max(pg_norm, 1e-12);
      if (pg_norm <= cfg.tol_pg * pg0_norm || pg_norm <= 1e-14) {
        inner_converged = true;
        break;
      }

      // two-loop recursion on the projected gradient
      Eigen::VectorXd q = pg;
      const int mlen = static_cast<int>(mem_s.size());
      std::vector<double> alpha(mlen);
      for (int j = mlen - 1; j >= 0; --j) {
        const double rho_j = 1.0 / mem_y[j].dot(mem_s[j]);
        alpha[j] = rho_j * mem_s[j].dot(q);
        q -= alpha[j] * mem_y[j];
      }
      if (mlen > 0) {
        const double gamma =
            mem_s.back().dot(mem_y.back()) / mem_y.back().dot(mem_y.back());
        q *= gamma;
      }
      for (int j = 0; j < mlen; ++j) {
        const double rho_j = 1.0 / mem_y[j].dot(mem_s[j]);
        const double beta = rho_j * mem_y[j].dot(q);
        q += (alpha[j] - beta) * mem_s[j];
      }
      Eigen::VectorXd dir = -q;
      // keep blocked coordinates out of the step
      for (int i = 0; i < N; ++i) {
        if ((u[i] <= spec.u_min && g[i] > 0) || (u[i] >= spec.u_max && g[i] < 0)) dir[i] = 0;
      }
      if (dir.dot(g) > -1e-14 * dir.norm() * g.norm()) dir = -pg;

      // projected Armijo backtracking
      double step_len = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < cfg.max_linesearch; ++ls) {
        Eigen::VectorXd u_trial = project(u + step_len * dir);
        Eigen::VectorXd s = u_trial - u;
        const double m = g.dot(s);
        if (m >= 0 || s.lpNorm<Eigen::Infinity>() <= 1e-16) break;
        auto [f_trial, g_trial] = eval(u_trial);
        if (std::isfinite(f_trial) && f_trial <= f + cfg.armijo_c * m) {
          Eigen::VectorXd y = g_trial - g;
          const double sy = s.dot(y);
          if (sy > 1e-12 * s.norm() * y.norm()) {
            mem_s.push_back(s);
            mem_y.push_back(y);
            if (static_cast<int>(mem_s.size()) > cfg.lbfgs_memory) {
              mem_s.erase(mem_s.begin());
              mem_y.erase(mem_y.begin());
            }
          }
          u = std::move(u_trial);
          f = f_trial;
          g = std::move(g_trial);
          rep.merit_trace.back().push_back(f);
          accepted = true;
          break;
        }
        step_len *= 0.5;
      }
      if (!accepted) {
        inner_converged = true;  // no further progress at line-search resolution
        break;
      }
    }

    // ---- outer: measure hard feasibility, update multipliers/penalty ----
    auto [viol, resid] = hard_violation(u);
    const double cost_now = scenario_cost(u, model, grid, spec, step);
    if (viol < best_viol - 1e-12 ||
        (std::abs(viol - best_viol) <= 1e-12 && cost_now < best_cost)) {
      best_viol = viol;
      best_cost = cost_now;
      u_best = u;
    }

    if (viol <= cfg.tol_feasibility && inner_converged) {
      rep.success = true;
      break;
    }
    if (spec.n_ineq == 0) break;  // unconstrained: nothing more to do

    for (Eigen::Index i = 0; i < al.lambda.size(); ++i) {
      al.lambda[i] = std::max(0.0, al.lambda[i] + al.rho * resid[i]);
    }
    if (viol > 0.25 * prev_viol) al.rho = std::min(10.0 * al.rho, cfg.rho_max);
    prev_viol = viol;
  }

  if (spec.n_ineq == 0 && inner_converged) rep.success = true;

  ControlTrajectory traj;
  traj.values = u_best;
  traj.u_min = spec.u_min;
  traj.u_max = spec.u_max;
  rep.cost = best_cost;
  rep.max_violation = best_viol;
  rep.message = rep.success ? "converged" : "returned least-infeasible iterate";
  return {traj, rep};
}

}  // namespace odeplan
