#include "sfilter/sim.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace sfilter {

void TrackingPlant::validate() const {
  if (!(lambda > 0.0)) throw std::invalid_argument("plant: lambda must be > 0");
  if (!(m_const >= 1.0)) throw std::invalid_argument("plant: M must be >= 1");
}

double comparison_function(double t, double h0, double c_h, double m_const, double e0_norm,
                           double lambda, double alpha) {
  const double c = c_h * m_const * e0_norm / (lambda - alpha);
  return (h0 - c) * std::exp(-alpha * t) + c * std::exp(-lambda * t);
}

namespace {

std::string event_name(const SceneEvent& e) {
  switch (e.action) {
    case SceneEvent::Action::Enable:
      return e.obstacle + ":enable";
    case SceneEvent::Action::Disable:
      return e.obstacle + ":disable";
    case SceneEvent::Action::Move:
      return e.obstacle + ":move";
  }
  return e.obstacle;
}

struct PlantTelemetry {
  double e0_norm = 0.0;
  double e_max_norm = 0.0;
};

RolloutResult roll(const RobotModel& model, PlanningScene scene, const Trajectory& traj,
                   const Eigen::VectorXd& q0, const CbfParams& cbf_params,
                   const TrackerParams& tracker_params, double dt, double t_max,
                   std::vector<SceneEvent> events, const TrackingPlant* plant,
                   const Eigen::VectorXd& qdot0, PlantTelemetry* telemetry) {
  traj.validate();
  if (!(dt > 0.0) || !(t_max > 0.0)) throw std::invalid_argument("dt and t_max must be > 0");
  std::stable_sort(events.begin(), events.end(),
                   [](const SceneEvent& a, const SceneEvent& b) { return a.time < b.time; });

  RolloutResult out;
  out.output.behavior = traj.behavior;

  TrackerState state;
  state.params = tracker_params;
  Eigen::VectorXd q = q0;
  Eigen::VectorXd qdot = qdot0;  // DoubleIntegratorP state
  Eigen::VectorXd err;           // FirstOrderError state
  bool err_init = false;

  size_t next_event = 0;
  const long steps = static_cast<long>(std::floor(t_max / dt + 1e-9));
  for (long k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * dt;

    std::string event_label;
    while (next_event < events.size() && events[next_event].time <= t + 1e-12) {
      scene = apply_event(scene, events[next_event]);
      if (!event_label.empty()) event_label += ";";
      event_label += event_name(events[next_event]);
      ++next_event;
    }

    const Eigen::VectorXd v_des = desired_velocity(state, traj, q, dt);
    const CbfStepResult step = cbf_step(model, scene, q, v_des, cbf_params, dt);
    const Eigen::VectorXd v_applied =
        step.qp_feasible ? step.v_star : Eigen::VectorXd::Zero(q.size()).eval();

    TraceRow row;
    row.t = t;
    row.q = q;
    row.v = step.v_star;
    row.h_min = step.h_min;
    row.nearest_pair = step.nearest_pair;
    row.qp_status = step.any_pair_failed ? "failed" : (step.qp_feasible ? "ok" : "infeasible");
    row.event = event_label;
    out.trace.push_back(row);
    out.output.waypoints.push_back({t, q});
    if (event_label.empty()) out.min_h = std::min(out.min_h, step.h_min);

    if (reached_goal(state, traj, q)) {
      out.converged = true;
      break;
    }

    if (!plant) {
      q = step.q_next;
      continue;
    }

    const double lambda = plant->lambda;
    const double decay = std::exp(-lambda * dt);
    const double gain = (1.0 - decay) / lambda;
    if (plant->mode == TrackingPlant::Mode::FirstOrderError) {
      if (!err_init) {
        err = qdot0 - v_applied;
        err_init = true;
        if (telemetry) telemetry->e0_norm = err.norm();
      }
      if (telemetry) telemetry->e_max_norm = std::max(telemetry->e_max_norm, err.norm());
      q = q + dt * v_applied + gain * err;
      err *= decay;
    } else {
      const Eigen::VectorXd e = qdot - v_applied;
      if (!err_init) {
        err_init = true;
        if (telemetry) telemetry->e0_norm = e.norm();
      }
      if (telemetry) telemetry->e_max_norm = std::max(telemetry->e_max_norm, e.norm());
      q = q + dt * v_applied + gain * e;
      qdot = v_applied + decay * e;
    }
  }
  return out;
}

}  // namespace

RolloutResult rollout_kinematic(const RobotModel& model, const PlanningScene& scene,
                                const Trajectory& traj, const Eigen::VectorXd& q0,
                                const CbfParams& cbf_params, const TrackerParams& tracker_params,
                                double dt, double t_max, const std::vector<SceneEvent>& events) {
  return roll(model, scene, traj, q0, cbf_params, tracker_params, dt, t_max, events, nullptr,
              Eigen::VectorXd::Zero(q0.size()), nullptr);
}

DynamicRollout rollout_dynamic(const RobotModel& model, const PlanningScene& scene,
                               const Trajectory& traj, const Eigen::VectorXd& q0,
                               const Eigen::VectorXd& qdot0, const TrackingPlant& plant,
                               const CbfParams& cbf_params, const TrackerParams& tracker_params,
                               double dt, double t_max, const std::vector<SceneEvent>& events,
                               double comparison_tolerance) {
  plant.validate();
  cbf_params.validate();
  if (!(plant.lambda > cbf_params.alpha))
    throw std::invalid_argument("rollout_dynamic: certificate requires lambda > alpha");
  if (qdot0.size() != q0.size())
    throw std::invalid_argument("rollout_dynamic: qdot0 dimension mismatch");

  DynamicRollout out;
  PlantTelemetry telemetry;
  out.rollout = roll(model, scene, traj, q0, cbf_params, tracker_params, dt, t_max, events,
                     &plant, qdot0, &telemetry);

  SafetyCertificate& cert = out.certificate;
  cert.c_h = cbf_params.j_max;
  cert.lambda = plant.lambda;
  cert.alpha = cbf_params.alpha;
  cert.m_const = plant.m_const;
  // FirstOrderError satisfies the exponential contract from t0 exactly; the
  // velocity-feedback mode re-anchors at QP switches, so its certificate uses
  // the largest observed error (stricter than a plain initial-error bound).
  cert.e0_norm = plant.mode == TrackingPlant::Mode::FirstOrderError ? telemetry.e0_norm
                                                                    : telemetry.e_max_norm;
  cert.margin = cert.c_h * plant.m_const * cert.e0_norm / (plant.lambda - cbf_params.alpha);

  const auto& trace = out.rollout.trace;
  if (!trace.empty()) {
    cert.h0 = trace.front().h_min;
    cert.s_m_member = cert.h0 - cert.margin >= 0.0;
    double min_h = std::numeric_limits<double>::infinity();
    double worst = -std::numeric_limits<double>::infinity();
    for (const TraceRow& row : trace) {
      if (!row.event.empty()) continue;
      const double y = comparison_function(row.t, cert.h0, cert.c_h, cert.m_const, cert.e0_norm,
                                           cert.lambda, cert.alpha);
      worst = std::max(worst, y - row.h_min);
      min_h = std::min(min_h, row.h_min);
    }
    cert.min_h_observed = min_h;
    cert.max_comparison_violation = worst;
    cert.comparison_held = worst <= comparison_tolerance;
  }
  return out;
}

GradientProbeStats gradient_disturbance_probe(const RobotModel& model, const PlanningScene& scene,
                                              const std::vector<Eigen::VectorXd>& q_samples,
                                              double fd_step) {
  GradientProbeStats stats;
  double delta_sum = 0.0;

  CbfParams plain;
  plain.robust_margin = false;

  auto h_of = [&](const Eigen::VectorXd& q) { return min_signed_distance(scene, model, q).min_sd; };

  for (const Eigen::VectorXd& q : q_samples) {
    const SceneDistanceResult base = min_signed_distance(scene, model, q);
    if (base.pairs.empty() || base.pairs.front().failed) {
      ++stats.rejected;
      continue;
    }
    const Eigen::VectorXd approx =
        build_constraint(scene, model, q, base.pairs.front(), plain).coeffs;

    const long n = q.size();
    Eigen::VectorXd grad(n);
    bool reject = false;
    for (long j = 0; j < n && !reject; ++j) {
      Eigen::VectorXd qp = q, qm = q;
      qp(j) += fd_step;
      qm(j) -= fd_step;
      const double hp = h_of(qp);
      const double hm = h_of(qm);
      const double fwd = (hp - base.min_sd) / fd_step;
      const double bwd = (base.min_sd - hm) / fd_step;
      // A kink inside the stencil shows up as disagreeing one-sided slopes.
      if (std::abs(fwd - bwd) > 1e-3) reject = true;
      grad(j) = (hp - hm) / (2.0 * fd_step);
    }
    if (reject) {
      ++stats.rejected;
      continue;
    }
    const double delta = (grad - approx).norm();
    ++stats.samples;
    stats.max_grad_norm = std::max(stats.max_grad_norm, grad.norm());
    stats.max_delta_norm = std::max(stats.max_delta_norm, delta);
    delta_sum += delta;
  }
  if (stats.samples > 0) stats.mean_delta_norm = delta_sum / stats.samples;
  return stats;
}

void to_json(nlohmann::json& j, const TrackingPlant& p) {
  j = {{"lambda", p.lambda},
       {"m_const", p.m_const},
       {"mode", p.mode == TrackingPlant::Mode::FirstOrderError ? "first_order_error"
                                                               : "double_integrator_p"}};
}

void from_json(const nlohmann::json& j, TrackingPlant& p) {
  p = TrackingPlant{};
  p.lambda = j.value("lambda", p.lambda);
  p.m_const = j.value("m_const", p.m_const);
  const std::string mode = j.value("mode", "first_order_error");
  if (mode == "first_order_error")
    p.mode = TrackingPlant::Mode::FirstOrderError;
  else if (mode == "double_integrator_p")
    p.mode = TrackingPlant::Mode::DoubleIntegratorP;
  else
    throw std::invalid_argument("unknown plant mode: " + mode);
  p.validate();
}

void to_json(nlohmann::json& j, const SafetyCertificate& c) {
  j = {{"c_h", c.c_h},
       {"margin", c.margin},
       {"e0_norm", c.e0_norm},
       {"s_m_member", c.s_m_member},
       {"h0", c.h0},
       {"min_h_observed", c.min_h_observed},
       {"max_comparison_violation", c.max_comparison_violation},
       {"comparison_held", c.comparison_held},
       {"lambda", c.lambda},
       {"alpha", c.alpha},
       {"m_const", c.m_const}};
}

}  // namespace sfilter
