#include "odeplan/ekf.hpp"

namespace odeplan {

Eigen::Matrix3d bergman_jacobian(const Eigen::Vector3d& state, const BergmanParams& p) {
  Eigen::Matrix3d A;
  A << -p.p1 - state[kX], -state[kG], 0.0,  //
      0.0, -p.p2, p.p3,                     //
      0.0, 0.0, -p.n;
  return A;
}

EkfState ekf_predict(const EkfState& ekf, const BergmanParams& params,
                     const std::function<double(double)>& input,
                     const std::function<double(double)>& disturbance, double t_to,
                     const EkfConfig& cfg) {
  if (t_to < ekf.last_update_time - 1e-9) {
    throw std::invalid_argument("ekf_predict cannot go backward in time");
  }
  EkfState out = ekf;
  if (t_to <= ekf.last_update_time + 1e-12) {
    out.last_update_time = t_to;
    return out;
  }

  const BergmanField field{params};
  const auto grid = detail::make_step_grid(ekf.last_update_time, t_to, cfg.step);
  const Eigen::Matrix3d Q = cfg.q_rate.asDiagonal();

  Vec x = out.mean;
  Vec xn(3);
  Rk4Scratch w;
  w.resize(3);
  Eigen::Matrix3d P = out.covariance;
  const long last = grid.last_index();
  for (long i = 0; i < last; ++i) {
    const double t = grid.time_at(i);
    const double h = grid.step_at(i);
    const Eigen::Matrix3d F =
        Eigen::Matrix3d::Identity() + h * bergman_jacobian(x.head<3>(), params);
    rk4_step(field, t, h, input, disturbance, x, xn, w);
    if (!detail::all_finite(xn)) throw IntegrationFailure(grid.time_at(i + 1), xn);
    x.swap(xn);
    P = F * P * F.transpose() + h * Q;
    P = 0.5 * (P + P.transpose());
  }
  out.mean = x.head<3>();
  out.covariance = P;
  out.last_update_time = t_to;
  return out;
}

EkfState ekf_update(const EkfState& ekf, double y, double sigma) {
  const Eigen::RowVector3d H{1.0, 0.0, 0.0};
  const double R = sigma * sigma;
  const double S = (H * ekf.covariance * H.transpose())(0) + R;
  if (!(S > 0.0)) throw std::runtime_error("non-positive innovation variance");
  const Eigen::Vector3d K = ekf.covariance * H.transpose() / S;

  EkfState out = ekf;
  out.mean = ekf.mean + K * (y - ekf.mean[kG]);
  const Eigen::Matrix3d IKH = Eigen::Matrix3d::Identity() - K * H;
  Eigen::Matrix3d P = IKH * ekf.covariance * IKH.transpose() + K * R * K.transpose();
  out.covariance = 0.5 * (P + P.transpose());
  return out;
}

EkfState ekf_state_at_zero(const Dataset& data, const BergmanParams& params,
                           const MealSchedule& schedule, const TrainingInput& input,
                           const PriorSpec& prior, const EkfConfig& cfg,
                           std::vector<EkfState>* trace) {
  EkfState ekf;
  ekf.mean = {prior.state[0].mean, prior.state[1].mean, prior.state[2].mean};
  ekf.covariance = Eigen::Vector3d(prior.state[0].sd * prior.state[0].sd,
                                   prior.state[1].sd * prior.state[1].sd,
                                   prior.state[2].sd * prior.state[2].sd)
                       .asDiagonal();
  ekf.last_update_time = data.t_begin;

  auto u = [&input](double t) { return input(t); };
  auto d = [&schedule](double t) { return meal_rate(schedule, t); };

  if (trace) trace->push_back(ekf);
  for (size_t m = 0; m < data.times.size(); ++m) {
    ekf = ekf_predict(ekf, params, u, d, data.times[m], cfg);
    ekf = ekf_update(ekf, data.values[m], data.noise_sigma);
    if (trace) trace->push_back(ekf);
  }
  ekf = ekf_predict(ekf, params, u, d, 0.0, cfg);
  if (trace) trace->push_back(ekf);
  return ekf;
}

std::pair<ControlTrajectory, SolveReport> nominal_plan(
    const Dataset& data, const BergmanParams& nominal, const MealSchedule& schedule,
    const TrainingInput& input, const PriorSpec& prior, const EkfConfig& ekf_cfg,
    const OcpSpec& spec, const ControlGrid& grid, double ocp_step,
    const SolverConfig& solver_cfg) {
  const EkfState at_zero = ekf_state_at_zero(data, nominal, schedule, input, prior, ekf_cfg);
  Scenario sc;
  sc.theta = {nominal.p2, nominal.p3, nominal.n};
  sc.x0 = at_zero.mean;
  sc.index = 0;
  BergmanScenarioModel model({sc}, schedule, grid, ocp_step);
  return solve_ocp(model, grid, spec, ocp_step, solver_cfg,
                   Eigen::VectorXd::Zero(grid.intervals()));
}

}  // namespace odeplan
