#include "sfilter/tracker.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace sfilter {

namespace {
constexpr double kProgressRate = 1e-4;  // rad/s of required approach
}

void Trajectory::validate() const {
  if (waypoints.empty()) throw std::invalid_argument("trajectory is empty");
  const long n = waypoints.front().q.size();
  for (size_t i = 0; i < waypoints.size(); ++i) {
    if (waypoints[i].q.size() != n)
      throw std::invalid_argument("trajectory waypoint " + std::to_string(i) +
                                  " has inconsistent dimension");
    if (i > 0 && !(waypoints[i].t > waypoints[i - 1].t))
      throw std::invalid_argument("trajectory timestamps must strictly increase");
  }
}

void TrackerParams::validate() const {
  if (!(k_p > 0.0) || !(epsilon > 0.0) || !(v_sat > 0.0) || !(stall_timeout > 0.0))
    throw std::invalid_argument("tracker parameters must be positive");
}

Eigen::VectorXd desired_velocity(TrackerState& state, const Trajectory& traj,
                                 const Eigen::VectorXd& q, double dt) {
  traj.validate();
  state.params.validate();
  if (traj.waypoints.front().q.size() != q.size())
    throw std::invalid_argument("tracker: configuration dimension mismatch");

  const int last = static_cast<int>(traj.size()) - 1;
  state.index = std::clamp(state.index, 0, last);

  auto reset_progress = [&] {
    state.stall_clock = 0.0;
    state.best_distance = std::numeric_limits<double>::infinity();
  };

  double dist = (traj.waypoints[state.index].q - q).norm();
  while (state.index < last && dist < state.params.epsilon) {
    ++state.index;
    reset_progress();
    dist = (traj.waypoints[state.index].q - q).norm();
  }

  if (dist < state.best_distance - kProgressRate * dt) {
    state.best_distance = dist;
    state.stall_clock = 0.0;
  } else {
    state.stall_clock += dt;
  }
  if (state.stall_clock > state.params.stall_timeout && state.index < last) {
    ++state.index;  // skip the unreachable waypoint
    reset_progress();
  }

  const Eigen::VectorXd raw = state.params.k_p * (traj.waypoints[state.index].q - q);
  return raw.cwiseMax(-state.params.v_sat).cwiseMin(state.params.v_sat);
}

bool reached_goal(const TrackerState& state, const Trajectory& traj, const Eigen::VectorXd& q) {
  const int last = static_cast<int>(traj.size()) - 1;
  return state.index == last && (traj.waypoints[last].q - q).norm() < state.params.epsilon;
}

RolloutResult run_filtered_tracking(const RobotModel& model, const PlanningScene& scene,
                                    const Trajectory& traj, const Eigen::VectorXd& q0,
                                    const CbfParams& cbf_params, const TrackerParams& tracker_params,
                                    double dt, double t_max) {
  traj.validate();
  if (!(dt > 0.0) || !(t_max > 0.0)) throw std::invalid_argument("dt and t_max must be > 0");

  RolloutResult out;
  out.output.behavior = traj.behavior;

  TrackerState state;
  state.params = tracker_params;
  Eigen::VectorXd q = q0;

  const long steps = static_cast<long>(std::floor(t_max / dt + 1e-9));
  for (long k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    const Eigen::VectorXd v_des = desired_velocity(state, traj, q, dt);
    const CbfStepResult step = cbf_step(model, scene, q, v_des, cbf_params, dt);

    TraceRow row;
    row.t = t;
    row.q = q;
    row.v = step.v_star;
    row.h_min = step.h_min;
    row.nearest_pair = step.nearest_pair;
    row.qp_status = step.any_pair_failed ? "failed" : (step.qp_feasible ? "ok" : "infeasible");
    out.trace.push_back(row);
    out.output.waypoints.push_back({t, q});
    out.min_h = std::min(out.min_h, step.h_min);

    if (reached_goal(state, traj, q)) {
      out.converged = true;
      break;
    }
    q = step.q_next;
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const Trajectory& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& wp : t.waypoints) {
    nlohmann::json row = nlohmann::json::array();
    row.push_back(wp.t);
    for (long i = 0; i < wp.q.size(); ++i) row.push_back(wp.q(i));
    rows.push_back(row);
  }
  j = {{"behavior", t.behavior}, {"waypoints", rows}};
}

void from_json(const nlohmann::json& j, Trajectory& t) {
  t.behavior = j.value("behavior", "");
  t.waypoints.clear();
  for (const auto& row : j.at("waypoints")) {
    if (!row.is_array() || row.size() < 2)
      throw std::invalid_argument("trajectory rows must be [t, q_1, ..., q_n]");
    Trajectory::Waypoint wp;
    wp.t = row[0].get<double>();
    wp.q.resize(static_cast<long>(row.size()) - 1);
    for (size_t i = 1; i < row.size(); ++i) wp.q(static_cast<long>(i) - 1) = row[i].get<double>();
    t.waypoints.push_back(std::move(wp));
  }
  t.validate();
}

void to_json(nlohmann::json& j, const TrackerParams& p) {
  j = {{"k_p", p.k_p},
       {"epsilon", p.epsilon},
       {"v_sat", p.v_sat},
       {"stall_timeout", p.stall_timeout}};
}

void from_json(const nlohmann::json& j, TrackerParams& p) {
  p = TrackerParams{};
  p.k_p = j.value("k_p", p.k_p);
  p.epsilon = j.value("epsilon", p.epsilon);
  p.v_sat = j.value("v_sat", p.v_sat);
  p.stall_timeout = j.value("stall_timeout", p.stall_timeout);
}

}  // namespace sfilter
