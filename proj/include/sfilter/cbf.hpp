#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "sfilter/json_fwd.hpp"
#include "sfilter/qp.hpp"
#include "sfilter/scene.hpp"

namespace sfilter {

struct CbfParams {
  double alpha = 2.0;              // linear class-K gain, 1/s
  bool robust_margin = true;       // add the gradient-disturbance margin
  enum class MarginMode { Global, Local };
  MarginMode margin_mode = MarginMode::Global;  // Global uses j_max; Local uses |J_A(q)|
  double j_max = 0.0;              // spectral-norm bound from jacobian_norm_bound
  double q_dot_max = 1.0;          // velocity box, rad/s (infinity norm)
  int max_pairs = 10;              // constraint budget, nearest pairs first

  void validate() const;
};

/// Half-space constraint on the commanded joint velocity: coeffs . v >= lower_bound.
struct LinearConstraint {
  Eigen::VectorXd coeffs;
  double lower_bound = 0.0;
  PairQuery pair;
};

/// Velocity constraint from one proximity result: the witness normal
/// composed with the point Jacobian(s) at the witness points, with the
/// barrier right-hand side -alpha h plus the robustness margin
/// (2 J q_dot_max for environment pairs, 4 J q_dot_max for self pairs).
LinearConstraint build_constraint(const PlanningScene& scene, const RobotModel& model,
                                  const Eigen::VectorXd& q, const PairResult& pair,
                                  const CbfParams& params);

struct FilterResult {
  Eigen::VectorXd v_star;
  bool feasible = true;
  int iterations = 0;
  std::vector<int> active_set;
  Eigen::VectorXd slack;  // residual coeffs.v - bound per constraint
};

/// Minimally modifies v_des subject to the CBF constraints and the velocity
/// box |v_j| <= q_dot_max. When the constraint set is inconsistent the
/// returned point minimizes the squared constraint violation instead and
/// feasible is false; callers must treat that as a stop request.
FilterResult filter_velocity(const Eigen::VectorXd& v_des,
                             const std::vector<LinearConstraint>& constraints,
                             const CbfParams& params);

struct CbfStepResult {
  Eigen::VectorXd q_next;
  Eigen::VectorXd v_star;
  double h_min = std::numeric_limits<double>::infinity();
  bool qp_feasible = true;
  bool any_pair_failed = false;
  std::string nearest_pair;
  int constraint_count = 0;
  int qp_iterations = 0;
};

/// One filter step: evaluate the scene, build constraints for the nearest
/// max_pairs pairs, solve the QP, and integrate q explicitly. On an
/// infeasible QP the position is held (q_next = q).
CbfStepResult cbf_step(const RobotModel& model, const PlanningScene& scene,
                       const Eigen::VectorXd& q, const Eigen::VectorXd& v_des,
                       const CbfParams& params, double dt);

void to_json(nlohmann::json& j, const CbfParams& p);
void from_json(const nlohmann::json& j, CbfParams& p);

}  // namespace sfilter
