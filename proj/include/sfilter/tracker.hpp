#pragma once

#include <Eigen/Dense>

#include <limits>
#include <string>
#include <vector>

#include "sfilter/cbf.hpp"
#include "sfilter/json_fwd.hpp"

namespace sfilter {

/// Time-stamped joint path.
struct Trajectory {
  struct Waypoint {
    double t = 0.0;
    Eigen::VectorXd q;
  };

  std::string behavior;
  std::vector<Waypoint> waypoints;

  size_t size() const { return waypoints.size(); }
  bool empty() const { return waypoints.empty(); }

  /// Strictly increasing timestamps, consistent dimensions.
  void validate() const;
};

struct TrackerParams {
  double k_p = 2.0;            // 1/s
  double epsilon = 0.02;       // waypoint advance radius, rad
  double v_sat = 1.0;          // per-joint saturation, rad/s
  double stall_timeout = 2.0;  // s without progress before skipping a waypoint

  void validate() const;
};

struct TrackerState {
  int index = 0;
  double stall_clock = 0.0;
  double best_distance = std::numeric_limits<double>::infinity();
  TrackerParams params;
};

/// Saturated P law toward the current waypoint. Advances the waypoint index
/// when q is within epsilon of it or when no progress has been made for
/// stall_timeout seconds (progress = the distance to the waypoint shrinking
/// by at least 1e-4 rad/s).
Eigen::VectorXd desired_velocity(TrackerState& state, const Trajectory& traj,
                                 const Eigen::VectorXd& q, double dt);

bool reached_goal(const TrackerState& state, const Trajectory& traj, const Eigen::VectorXd& q);

struct TraceRow {
  double t = 0.0;
  Eigen::VectorXd q;
  Eigen::VectorXd v;
  double h_min = std::numeric_limits<double>::infinity();
  std::string nearest_pair;
  std::string qp_status;  // ok | infeasible | failed
  std::string event;
};

struct RolloutResult {
  Trajectory output;
  std::vector<TraceRow> trace;
  bool converged = false;
  double min_h = std::numeric_limits<double>::infinity();
};

/// Tracks the reference trajectory through the CBF filter with explicit
/// Euler integration at the filter rate, until the terminal waypoint is
/// reached within epsilon or t_max elapses.
RolloutResult run_filtered_tracking(const RobotModel& model, const PlanningScene& scene,
                                    const Trajectory& traj, const Eigen::VectorXd& q0,
                                    const CbfParams& cbf_params, const TrackerParams& tracker_params,
                                    double dt, double t_max);

void to_json(nlohmann::json& j, const Trajectory& t);
void from_json(const nlohmann::json& j, Trajectory& t);
void to_json(nlohmann::json& j, const TrackerParams& p);
void from_json(const nlohmann::json& j, TrackerParams& p);

}  // namespace sfilter
