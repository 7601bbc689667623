#pragma once

#include "odeplan/bergman.hpp"
#include "odeplan/mmh.hpp"
#include "odeplan/ocp.hpp"

namespace odeplan {

// df/dx of the minimal model: [[-p1-X, -G, 0], [0, -p2, p3], [0, 0, -n]].
Eigen::Matrix3d bergman_jacobian(const Eigen::Vector3d& state, const BergmanParams& p);

struct EkfState {
  Eigen::Vector3d mean;
  Eigen::Matrix3d covariance;
  double last_update_time = 0.0;
};

struct EkfConfig {
  Eigen::Vector3d q_rate{1e-2, 1e-8, 1e-2};  // process noise per minute, diagonal
  double step = 0.5;                          // RK4 substep, minutes
  bool operator==(const EkfConfig& o) const {
    return q_rate[0] == o.q_rate[0] && q_rate[1] == o.q_rate[1] &&
           q_rate[2] == o.q_rate[2] && step == o.step;
  }
};

// Propagate mean by RK4 to t_to; covariance per substep with the first-order
// transition F = I + h A(x) and additive Q_rate * h, symmetrized.
EkfState ekf_predict(const EkfState& ekf, const BergmanParams& params,
                     const std::function<double(double)>& input,
                     const std::function<double(double)>& disturbance, double t_to,
                     const EkfConfig& cfg);

// Measurement update with H = [1 0 0] (only glucose observed), R = sigma^2,
// Joseph-form covariance update.
EkfState ekf_update(const EkfState& ekf, double y, double sigma);

// Filter initialized from the prior, run through all measurements, propagated
// to t = 0.
EkfState ekf_state_at_zero(const Dataset& data, const BergmanParams& params,
                           const MealSchedule& schedule, const TrainingInput& input,
                           const PriorSpec& prior, const EkfConfig& cfg,
                           std::vector<EkfState>* trace = nullptr);

// Baseline plan: fixed nominal parameters + EKF mean at t = 0 as the single
// scenario of the OCP.
std::pair<ControlTrajectory, SolveReport> nominal_plan(
    const Dataset& data, const BergmanParams& nominal, const MealSchedule& schedule,
    const TrainingInput& input, const PriorSpec& prior, const EkfConfig& ekf_cfg,
    const OcpSpec& spec, const ControlGrid& grid, double ocp_step,
    const SolverConfig& solver_cfg);

}  // namespace odeplan
