#pragma once

#include <Eigen/Dense>

#include <vector>

#include "sfilter/json_fwd.hpp"
#include "sfilter/tracker.hpp"

namespace sfilter {

/// Surrogate for the full-order plant: only the exponential decay of the
/// velocity-tracking error matters for the safety certificate, so the plant
/// is specified by that contract instead of inertia parameters.
///
/// FirstOrderError integrates the error state e' = -lambda e exactly, so
/// |e(t)| = e^{-lambda t} |e0| holds along the whole rollout (M = 1).
/// DoubleIntegratorP drives q'' = -lambda (q' - v*), which obeys the same
/// contract between QP active-set switches but re-anchors the error at each
/// switch.
struct TrackingPlant {
  double lambda = 8.0;   // 1/s, must exceed the CBF alpha for certificates
  double m_const = 1.0;  // overshoot constant M >= 1
  enum class Mode { FirstOrderError, DoubleIntegratorP };
  Mode mode = Mode::FirstOrderError;

  void validate() const;
};

struct SafetyCertificate {
  double c_h = 0.0;      // gradient bound (J_max)
  double margin = 0.0;   // C_h M |e0| / (lambda - alpha)
  double e0_norm = 0.0;
  bool s_m_member = false;        // h(q0) - margin >= 0
  double h0 = 0.0;
  double min_h_observed = 0.0;
  double max_comparison_violation = 0.0;  // max over samples of y(t) - h(q)
  bool comparison_held = false;           // violation <= tolerance
  double lambda = 0.0;
  double alpha = 0.0;
  double m_const = 1.0;
};

/// Comparison function from the kinematics-to-dynamics safety argument:
/// y(0) = h0, y' = -alpha y - c_h m |e0| e^{-lambda t}.
double comparison_function(double t, double h0, double c_h, double m_const, double e0_norm,
                           double lambda, double alpha);

/// Kinematic rollout (q' = v*) with optional scene events applied between
/// steps. Trace rows at which an event fired carry its description and are
/// excluded from invariance bookkeeping (min_h).
RolloutResult rollout_kinematic(const RobotModel& model, const PlanningScene& scene,
                                const Trajectory& traj, const Eigen::VectorXd& q0,
                                const CbfParams& cbf_params, const TrackerParams& tracker_params,
                                double dt, double t_max,
                                const std::vector<SceneEvent>& events = {});

struct DynamicRollout {
  RolloutResult rollout;
  SafetyCertificate certificate;
};

/// Full-order rollout: the commanded v* is tracked by the surrogate plant
/// and the certificate checks h(q(t)) >= y(t) pointwise (events excluded).
DynamicRollout rollout_dynamic(const RobotModel& model, const PlanningScene& scene,
                               const Trajectory& traj, const Eigen::VectorXd& q0,
                               const Eigen::VectorXd& qdot0, const TrackingPlant& plant,
                               const CbfParams& cbf_params, const TrackerParams& tracker_params,
                               double dt, double t_max,
                               const std::vector<SceneEvent>& events = {},
                               double comparison_tolerance = 1e-4);

struct GradientProbeStats {
  int samples = 0;
  int rejected = 0;   // stencils straddling a nonsmooth point
  double max_grad_norm = 0.0;      // max |dh/dq|_2 (finite differences)
  double max_delta_norm = 0.0;     // max |dh/dq - n' J|_2
  double mean_delta_norm = 0.0;
};

/// Finite-difference probe of the signed-distance gradient against its
/// witness-Jacobian approximation over the supplied configurations.
GradientProbeStats gradient_disturbance_probe(const RobotModel& model, const PlanningScene& scene,
                                              const std::vector<Eigen::VectorXd>& q_samples,
                                              double fd_step = 1e-6);

void to_json(nlohmann::json& j, const TrackingPlant& p);
void from_json(const nlohmann::json& j, TrackingPlant& p);
void to_json(nlohmann::json& j, const SafetyCertificate& c);

}  // namespace sfilter
