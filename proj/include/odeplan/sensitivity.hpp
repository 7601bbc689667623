#pragma once

#include "odeplan/control_grid.hpp"
#include "odeplan/ode.hpp"

namespace odeplan {

// Rollout of a piecewise-constant input over the control grid, with the exact
// derivatives of the discrete RK4 recursion per interval:
//   step_jac[n]  = d x_{n+1} / d x_n
//   input_jac[n] = d x_{n+1} / d u_n
// State values are produced by the same rk4_step used by integrate_flow, so
// they agree bitwise with an integrate_flow call over the same grid.
struct LinearizedRollout {
  std::vector<Vec> states;     // x_0..x_N at the grid nodes
  std::vector<Mat> step_jac;   // Phi_n, n = 0..N-1 (empty if not requested)
  std::vector<Vec> input_jac;  // b_n
};

namespace detail {

struct SensScratch {
  Mat A, K2x, K3x, K4x, Kx;
  Vec B, Ku, K2u, K3u, K4u, xs;
  void resize(Eigen::Index n) {
    A.resize(n, n);
    K2x.resize(n, n);
    K3x.resize(n, n);
    K4x.resize(n, n);
    Kx.resize(n, n);
    B.resize(n);
    Ku.resize(n);
    K2u.resize(n);
    K3u.resize(n);
    K4u.resize(n);
    xs.resize(n);
  }
};

// Jacobian chain through the four RK4 stages for one substep; Field must
// provide jac(t, x, u, d, Ax, Bu) with Ax = df/dx, Bu = df/du. The stage
// states are rebuilt from the slopes recorded in the rk4_step scratch.
template <class Field, class DisturbFn>
void rk4_substep_jacobian(const Field& f, double t, double h, double u, const DisturbFn& d,
                          const Vec& x, const Rk4Scratch& w, SensScratch& s, Mat& phi,
                          Vec& b) {
  const Eigen::Index n = x.size();
  const double tm = t + 0.5 * h, te = t + h;
  const double ta = t + kSignalShift * h, tb = te - kSignalShift * h;

  f.jac(t, x, u, d(ta), s.A, s.B);
  s.Kx = s.A;
  s.Ku = s.B;

  s.xs = x + (0.5 * h) * w.k1;
  f.jac(tm, s.xs, u, d(tm), s.A, s.B);
  s.K2x.noalias() = s.A * s.Kx;
  s.K2x = s.A + (0.5 * h) * s.K2x;
  s.K2u.noalias() = s.A * s.Ku;
  s.K2u = (0.5 * h) * s.K2u + s.B;

  s.xs = x + (0.5 * h) * w.k2;
  f.jac(tm, s.xs, u, d(tm), s.A, s.B);
  s.K3x.noalias() = s.A * s.K2x;
  s.K3x = s.A + (0.5 * h) * s.K3x;
  s.K3u.noalias() = s.A * s.K2u;
  s.K3u = (0.5 * h) * s.K3u + s.B;

  s.xs = x + h * w.k3;
  f.jac(te, s.xs, u, d(tb), s.A, s.B);
  s.K4x.noalias() = s.A * s.K3x;
  s.K4x = s.A + h * s.K4x;
  s.K4u.noalias() = s.A * s.K3u;
  s.K4u = h * s.K4u + s.B;

  phi = Mat::Identity(n, n) + (h / 6.0) * (s.Kx + 2.0 * s.K2x + 2.0 * s.K3x + s.K4x);
  b = (h / 6.0) * (s.Ku + 2.0 * s.K2u + 2.0 * s.K3u + s.K4u);
}

}  // namespace detail

template <class Field, class DisturbFn>
LinearizedRollout rollout_linearized(const Field& f, const Vec& x0, const ControlGrid& grid,
                                     const Eigen::VectorXd& u, const DisturbFn& d, double h,
                                     bool with_jacobians) {
  const int N = grid.intervals();
  if (u.size() != N) throw std::invalid_argument("control length must match grid intervals");

  LinearizedRollout out;
  out.states.reserve(N + 1);
  out.states.push_back(x0);
  if (with_jacobians) {
    out.step_jac.resize(N);
    out.input_jac.resize(N);
  }

  const Eigen::Index nx = x0.size();
  Vec x = x0, xn(nx);
  Rk4Scratch w;
  w.resize(nx);
  detail::SensScratch sens;
  Mat phi_sub, phi_acc;
  Vec b_sub, b_acc;
  if (with_jacobians) {
    sens.resize(nx);
    phi_sub.resize(nx, nx);
    b_sub.resize(nx);
  }

  if (!detail::all_finite(x)) throw IntegrationFailure(grid.start(), x);
  for (int n = 0; n < N; ++n) {
    const int m = grid.substeps(n, h);
    const double un = u[n];
    auto uconst = [un](double) { return un; };
    if (with_jacobians) {
      phi_acc = Mat::Identity(nx, nx);
      b_acc = Vec::Zero(nx);
    }
    for (int i = 0; i < m; ++i) {
      const double t = grid.nodes[n] + i * h;
      rk4_step(f, t, h, uconst, d, x, xn, w);
      if (!detail::all_finite(xn)) throw IntegrationFailure(t + h, xn);
      if (with_jacobians) {
        detail::rk4_substep_jacobian(f, t, h, un, d, x, w, sens, phi_sub, b_sub);
        phi_acc = phi_sub * phi_acc;
        b_acc = phi_sub * b_acc + b_sub;
      }
      x.swap(xn);
    }
    out.states.push_back(x);
    if (with_jacobians) {
      out.step_jac[n] = phi_acc;
      out.input_jac[n] = b_acc;
    }
  }
  return out;
}

// Full forward sensitivity tensor: result[k] is n_x x N with column n equal to
// d x_k / d u_n (zero for n >= k).
inline std::vector<Mat> full_sensitivities(const LinearizedRollout& r) {
  const int N = static_cast<int>(r.step_jac.size());
  const Eigen::Index nx = r.states.front().size();
  std::vector<Mat> S(N + 1);
  S[0] = Mat::Zero(nx, N);
  for (int k = 0; k < N; ++k) {
    S[k + 1] = r.step_jac[k] * S[k];
    S[k + 1].col(k) = r.input_jac[k];
  }
  return S;
}

template <class Field, class DisturbFn>
std::pair<std::vector<Vec>, std::vector<Mat>> propagate_with_sensitivities(
    const Field& f, const Vec& x0, const ControlGrid& grid, const Eigen::VectorXd& u,
    const DisturbFn& d, double h) {
  auto roll = rollout_linearized(f, x0, grid, u, d, h, /*with_jacobians=*/true);
  auto sens = full_sensitivities(roll);
  return {std::move(roll.states), std::move(sens)};
}

// Integrate the piecewise-constant control interval by interval (the input is
// frozen at u_n for all stage evaluations within [tau_n, tau_{n+1}]), recording
// at the requested times. For RK4 grids aligned with the step this reproduces
// the rollout recursion bitwise at the nodes; the scheme may also be Tsit54
// for ground-truth evaluation.
template <class Field, class DisturbFn>
Trajectory integrate_piecewise(const Field& f, const Vec& x0, const ControlGrid& grid,
                               const Eigen::VectorXd& u, const DisturbFn& d,
                               const IntegratorConfig& cfg,
                               std::span<const double> record_at) {
  const int N = grid.intervals();
  if (u.size() != N) throw std::invalid_argument("control length must match grid intervals");

  Trajectory out;
  out.times.reserve(record_at.size());
  out.states.reserve(record_at.size());

  Vec x = x0, xn(x0.size());
  Rk4Scratch wr;
  Tsit54Scratch wt;
  if (cfg.scheme == Scheme::kRk4) {
    wr.resize(x0.size());
  } else {
    wt.resize(x0.size());
  }
  if (!detail::all_finite(x)) throw IntegrationFailure(grid.start(), x);

  size_t m = 0;
  // skip record times before the grid start (after snapping they belong here)
  for (int n = 0; n < N; ++n) {
    const double t0 = grid.nodes[n], t1 = grid.nodes[n + 1];
    const auto step_grid = detail::make_step_grid(t0, t1, cfg.step);
    const long last = step_grid.last_index();
    const double un = u[n];
    auto uconst = [un](double) { return un; };

    auto record_here = [&](long i) {
      const bool final_interval = (n == N - 1);
      while (m < record_at.size()) {
        long idx = snap_to_grid(t0, record_at[m], cfg.step);
        idx = std::max(idx, 0L);
        if (idx > last || (idx == last && !final_interval)) break;  // next interval
        if (idx != i) break;
        out.times.push_back(step_grid.time_at(i));
        out.states.push_back(x);
        ++m;
      }
    };

    record_here(0);
    for (long i = 0; i < last; ++i) {
      const double t = step_grid.time_at(i);
      const double h = step_grid.step_at(i);
      if (cfg.scheme == Scheme::kRk4) {
        rk4_step(f, t, h, uconst, d, x, xn, wr);
      } else {
        tsit54_step(f, t, h, uconst, d, x, xn, wt);
      }
      if (!detail::all_finite(xn)) throw IntegrationFailure(step_grid.time_at(i + 1), xn);
      x.swap(xn);
      record_here(i + 1);
    }
  }
  return out;
}

}  // namespace odeplan
