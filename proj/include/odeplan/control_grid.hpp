#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace odeplan {

// Control grid tau_0 < ... < tau_N over the prediction horizon; the input is
// piecewise constant on each interval.
struct ControlGrid {
  std::vector<double> nodes;

  static ControlGrid uniform(double t0, double horizon, int intervals) {
    if (intervals < 1) throw std::invalid_argument("control grid needs >= 1 interval");
    ControlGrid g;
    g.nodes.resize(intervals + 1);
    const double dt = horizon / intervals;
    for (int i = 0; i <= intervals; ++i) g.nodes[i] = t0 + i * dt;
    g.nodes.back() = t0 + horizon;
    return g;
  }

  int intervals() const { return static_cast<int>(nodes.size()) - 1; }
  double delta(int n) const { return nodes[n + 1] - nodes[n]; }
  double start() const { return nodes.front(); }
  double end() const { return nodes.back(); }

  // Substep count for interval n; throws unless delta(n) is an integral
  // multiple of the integrator step.
  int substeps(int n, double h) const {
    const double d = delta(n);
    const long m = std::lround(d / h);
    if (m < 1 || std::abs(m * h - d) > 1e-9 * std::max(1.0, d)) {
      throw std::invalid_argument("grid spacing must be a multiple of the integrator step");
    }
    return static_cast<int>(m);
  }
};

// Decision variables of the discretized problem: one input value per interval
// (scalar input), plus the pump box bounds.
struct ControlTrajectory {
  Eigen::VectorXd values;
  double u_min = 0.0;
  double u_max = 20.0;

  int size() const { return static_cast<int>(values.size()); }
};

// Pointwise evaluation of the discrete control: right-continuous
// (u(tau_n) = u_n), with u(tau_N) clamped to the last interval. Used for
// sampling the applied input in cost quadrature; trajectory propagation goes
// through the per-interval flow map instead (see integrate_piecewise), because
// the input value exactly at a switching time is ambiguous for stage sampling.
struct ControlSignal {
  const ControlGrid* grid;
  const Eigen::VectorXd* values;

  double operator()(double t) const {
    const auto& nodes = grid->nodes;
    // last node at or before t (1e-9 slack around node times)
    auto it = std::upper_bound(nodes.begin(), nodes.end(), t + 1e-9);
    long idx = static_cast<long>(it - nodes.begin()) - 1;
    idx = std::clamp(idx, 0L, static_cast<long>(values->size()) - 1);
    return (*values)[idx];
  }
};

}  // namespace odeplan
