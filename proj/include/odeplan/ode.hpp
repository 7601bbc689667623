#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace odeplan {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Thrown when a state component becomes non-finite during integration. The
// MMH sampler maps this to log-likelihood = -inf instead of propagating NaN.
class IntegrationFailure : public std::runtime_error {
 public:
  IntegrationFailure(double t, Vec state)
      : std::runtime_error("non-finite state at t=" + std::to_string(t)),
        time_(t),
        state_(std::move(state)) {}
  double time() const { return time_; }
  const Vec& state() const { return state_; }

 private:
  double time_;
  Vec state_;
};

enum class Scheme { kRk4, kTsit54 };

struct IntegratorConfig {
  double step = 0.5;  // minutes
  Scheme scheme = Scheme::kRk4;
  bool operator==(const IntegratorConfig&) const = default;
};

// States sampled on a strictly increasing time grid.
struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> states;
};

namespace detail {

inline bool all_finite(const Vec& x) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) return false;
  }
  return true;
}

// Step grid over [t0, t1]: full_steps of size h plus an optional shortened
// final step so the interval endpoint is hit exactly.
struct StepGrid {
  double t0 = 0, h = 0.5;
  long full_steps = 0;
  double remainder = 0;  // length of the partial step, 0 if none

  long last_index() const { return full_steps + (remainder > 0 ? 1 : 0); }
  double time_at(long i) const {
    if (remainder > 0 && i == full_steps + 1) return t0 + full_steps * h + remainder;
    return t0 + i * h;
  }
  double step_at(long i) const {  // step taken from index i to i+1
    return (remainder > 0 && i == full_steps) ? remainder : h;
  }
};

inline StepGrid make_step_grid(double t0, double t1, double h) {
  if (!(h > 0)) throw std::invalid_argument("integrator step must be positive");
  if (!(t1 > t0)) throw std::invalid_argument("integration interval must have t1 > t0");
  const double total = t1 - t0;
  auto full = static_cast<long>(std::floor(total / h + 1e-9));
  double rem = total - full * h;
  if (rem <= 1e-9 * std::max(1.0, std::abs(total))) rem = 0;
  return StepGrid{t0, h, full, rem};
}

}  // namespace detail

// Nearest integrator grid index for a requested time (measurement times are
// snapped onto the step grid rather than interpolated).
inline long snap_to_grid(double t0, double t, double h) {
  return std::lround((t - t0) / h);
}

struct Rk4Scratch {
  Vec k1, k2, k3, k4, xs;
  void resize(Eigen::Index n) {
    k1.resize(n);
    k2.resize(n);
    k3.resize(n);
    k4.resize(n);
    xs.resize(n);
  }
};

// Signals are sampled a hair inside the step: a jump sitting exactly on a step
// boundary is then seen post-jump by the step starting there and pre-jump by
// the step ending there, matching the exact response to square-wave forcing.
// The shift (1e-6 h) is far below the truncation error for smooth signals.
inline constexpr double kSignalShift = 1e-6;

// One classical RK4 step. Field: f(t, x, u, d, out); InputFn/DisturbFn: t -> double.
// The input is sampled at the stage times t, t+h/2, t+h (boundary stages
// shifted inward per kSignalShift).
template <class Field, class InputFn, class DisturbFn>
void rk4_step(const Field& f, double t, double h, const InputFn& u, const DisturbFn& d,
              const Vec& x, Vec& out, Rk4Scratch& w) {
  const double tm = t + 0.5 * h, te = t + h;
  const double ta = t + kSignalShift * h, tb = te - kSignalShift * h;
  const double u0 = u(ta), um = u(tm), ue = u(tb);
  const double d0 = d(ta), dm = d(tm), de = d(tb);
  f(t, x, u0, d0, w.k1);
  w.xs = x + (0.5 * h) * w.k1;
  f(tm, w.xs, um, dm, w.k2);
  w.xs = x + (0.5 * h) * w.k2;
  f(tm, w.xs, um, dm, w.k3);
  w.xs = x + h * w.k3;
  f(te, w.xs, ue, de, w.k4);
  out = x + (h / 6.0) * (w.k1 + 2.0 * w.k2 + 2.0 * w.k3 + w.k4);
}

template <class Field, class InputFn, class DisturbFn>
Vec rk4_step(const Field& f, const Vec& x, double t, double h, const InputFn& u,
             const DisturbFn& d) {
  Rk4Scratch w;
  w.resize(x.size());
  Vec out(x.size());
  rk4_step(f, t, h, u, d, x, out, w);
  if (!detail::all_finite(out)) throw IntegrationFailure(t + h, out);
  return out;
}

namespace detail {

// Tsitouras 5(4) explicit tableau (fifth-order weights; no embedded error
// control, the scheme is run at a fixed step).
struct Tsit54Tableau {
  static constexpr double c2 = 0.161, c3 = 0.327, c4 = 0.9;
  static constexpr double c5 = 0.9800255409045097;
  static constexpr double a21 = 0.161;
  static constexpr double a31 = -0.008480655492356989, a32 = 0.335480655492357;
  static constexpr double a41 = 2.8971530571054935, a42 = -6.359448489975075,
                          a43 = 4.3622954328695815;
  static constexpr double a51 = 5.325864828439257, a52 = -11.748883564062828,
                          a53 = 7.4955393428898365, a54 = -0.09249506636175525;
  static constexpr double a61 = 5.86145544294642, a62 = -12.92096931784711,
                          a63 = 8.159367898576159, a64 = -0.071584973281401,
                          a65 = -0.028269050394068383;
  static constexpr double b1 = 0.09646076681806523, b2 = 0.01, b3 = 0.4798896504144996,
                          b4 = 1.379008574103742, b5 = -3.290069515436081,
                          b6 = 2.324710524099774;
};

}  // namespace detail

struct Tsit54Scratch {
  Vec k1, k2, k3, k4, k5, k6, xs;
  void resize(Eigen::Index n) {
    k1.resize(n);
    k2.resize(n);
    k3.resize(n);
    k4.resize(n);
    k5.resize(n);
    k6.resize(n);
    xs.resize(n);
  }
};

template <class Field, class InputFn, class DisturbFn>
void tsit54_step(const Field& f, double t, double h, const InputFn& u, const DisturbFn& d,
                 const Vec& x, Vec& out, Tsit54Scratch& w) {
  using T = detail::Tsit54Tableau;
  auto stage = [&](double c, const Vec& xs, Vec& k) {
    const double ts = t + c * h;
    double tsig = ts;  // boundary stages sample signals just inside the step
    if (c == 0.0) tsig = t + kSignalShift * h;
    if (c == 1.0) tsig = t + h - kSignalShift * h;
    f(ts, xs, u(tsig), d(tsig), k);
  };
  stage(0.0, x, w.k1);
  w.xs = x + h * (T::a21 * w.k1);
  stage(T::c2, w.xs, w.k2);
  w.xs = x + h * (T::a31 * w.k1 + T::a32 * w.k2);
  stage(T::c3, w.xs, w.k3);
  w.xs = x + h * (T::a41 * w.k1 + T::a42 * w.k2 + T::a43 * w.k3);
  stage(T::c4, w.xs, w.k4);
  w.xs = x + h * (T::a51 * w.k1 + T::a52 * w.k2 + T::a53 * w.k3 + T::a54 * w.k4);
  stage(T::c5, w.xs, w.k5);
  w.xs = x + h * (T::a61 * w.k1 + T::a62 * w.k2 + T::a63 * w.k3 + T::a64 * w.k4 +
                  T::a65 * w.k5);
  stage(1.0, w.xs, w.k6);
  out = x + h * (T::b1 * w.k1 + T::b2 * w.k2 + T::b3 * w.k3 + T::b4 * w.k4 + T::b5 * w.k5 +
                 T::b6 * w.k6);
}

// Integrate over [t0, t1] at a fixed step, recording states at the requested
// times (snapped to the nearest grid point). record_at must be sorted and
// within [t0, t1]. Throws IntegrationFailure on non-finite states.
template <class Field, class InputFn, class DisturbFn>
Trajectory integrate_flow(const Field& f, const Vec& x0, const InputFn& u, const DisturbFn& d,
                          double t0, double t1, const IntegratorConfig& cfg,
                          std::span<const double> record_at) {
  const auto grid = detail::make_step_grid(t0, t1, cfg.step);
  const long last = grid.last_index();

  std::vector<long> want(record_at.size());
  for (size_t m = 0; m < record_at.size(); ++m) {
    long idx = snap_to_grid(t0, record_at[m], cfg.step);
    want[m] = std::clamp(idx, 0L, last);
  }

  Trajectory out;
  out.times.reserve(record_at.size());
  out.states.reserve(record_at.size());

  Vec x = x0;
  Vec xn(x.size());
  Rk4Scratch wr;
  Tsit54Scratch wt;
  if (cfg.scheme == Scheme::kRk4) {
    wr.resize(x.size());
  } else {
    wt.resize(x.size());
  }

  size_t m = 0;
  auto record_here = [&](long i) {
    while (m < want.size() && want[m] == i) {
      out.times.push_back(grid.time_at(i));
      out.states.push_back(x);
      ++m;
    }
  };

  if (!detail::all_finite(x)) throw IntegrationFailure(t0, x);
  record_here(0);
  for (long i = 0; i < last; ++i) {
    const double t = grid.time_at(i);
    const double h = grid.step_at(i);
    if (cfg.scheme == Scheme::kRk4) {
      rk4_step(f, t, h, u, d, x, xn, wr);
    } else {
      tsit54_step(f, t, h, u, d, x, xn, wt);
    }
    if (!detail::all_finite(xn)) throw IntegrationFailure(grid.time_at(i + 1), xn);
    x.swap(xn);
    record_here(i + 1);
  }
  return out;
}

template <class Field, class InputFn, class DisturbFn>
Trajectory tsit54_integrate(const Field& f, const Vec& x0, const InputFn& u,
                            const DisturbFn& d, double t0, double t1, double h,
                            std::span<const double> record_at) {
  IntegratorConfig cfg{h, Scheme::kTsit54};
  return integrate_flow(f, x0, u, d, t0, t1, cfg, record_at);
}

// Uniform sampling grid t0, t0+dt, ..., t1 for trajectory export.
inline std::vector<double> sample_times(double t0, double t1, double dt) {
  std::vector<double> ts;
  const long n = std::lround((t1 - t0) / dt);
  ts.reserve(n + 1);
  for (long i = 0; i <= n; ++i) ts.push_back(t0 + i * dt);
  if (!ts.empty()) ts.back() = t1;
  return ts;
}

}  // namespace odeplan
