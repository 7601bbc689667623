#include "odeplan/ocp.hpp"

namespace odeplan {

OcpSpec glucose_ocp_spec(const GlucoseOcpWeights& w) {
  OcpSpec spec;
  spec.running_cost = [w](double u, const Vec& x, double /*t*/) {
    const double e = x[kG] - w.G_ref;
    return w.W_G * e * e + w.W_U * u * u;
  };
  spec.running_cost_grad = [w](double u, const Vec& x, double /*t*/, double& dc_du,
                               Vec& dc_dx) {
    const double e = x[kG] - w.G_ref;
    dc_du = 2.0 * w.W_U * u;
    dc_dx.setZero();
    dc_dx[kG] = 2.0 * w.W_G * e;
  };
  spec.terminal_cost = [w](const Vec& x) {
    const double e = x[kG] - w.G_ref;
    return w.W_Gf * e * e;
  };
  spec.terminal_cost_grad = [w](const Vec& x, Vec& dcf_dx) {
    dcf_dx.setZero();
    dcf_dx[kG] = 2.0 * w.W_Gf * (x[kG] - w.G_ref);
  };
  spec.n_ineq = 2;
  spec.ineq = [w](const Vec& x, double /*t*/, Vec& h) {
    h[0] = w.G_lo - x[kG];
    h[1] = x[kG] - w.G_hi;
  };
  spec.ineq_jac = [](const Vec& x, double /*t*/, Mat& dh_dx) {
    dh_dx.setZero();
    dh_dx(0, kG) = -1.0;
    dh_dx(1, kG) = 1.0;
    (void)x;
  };
  spec.u_min = w.u_min;
  spec.u_max = w.u_max;
  return spec;
}

BergmanScenarioModel::BergmanScenarioModel(std::vector<Scenario> scenarios,
                                           MealSchedule meals, const ControlGrid& grid,
                                           double step)
    : scenarios_(std::move(scenarios)), meals_(std::move(meals)) {
  t0_ = grid.start();
  dt_ = step / 2.0;
  const long count = std::lround((grid.end() - t0_) / dt_) + 1;
  d_left_.resize(count);
  d_right_.resize(count);
  for (long i = 0; i < count; ++i) {
    const double t = t0_ + i * dt_;
    d_right_[i] = meal_rate(meals_, t);
    d_left_[i] = meal_rate(meals_, t - 1e-9);
  }
}

double BergmanScenarioModel::disturbance(double t) const {
  const long i = std::lround((t - t0_) / dt_);
  if (i >= 0 && i < static_cast<long>(d_right_.size())) {
    const double ti = t0_ + i * dt_;
    if (std::abs(t - ti) <= 0.4 * dt_) return t < ti ? d_left_[i] : d_right_[i];
  }
  return meal_rate(meals_, t);
}

}  // namespace odeplan
