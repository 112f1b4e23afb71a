#include "sfilter/cbf.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace sfilter {

void CbfParams::validate() const {
  if (!(alpha > 0.0)) throw std::invalid_argument("cbf: alpha must be > 0");
  if (!(q_dot_max > 0.0)) throw std::invalid_argument("cbf: q_dot_max must be > 0");
  if (robust_margin && margin_mode == MarginMode::Global && !(j_max > 0.0))
    throw std::invalid_argument("cbf: j_max must be > 0 with the global robust margin");
  if (max_pairs < 1) throw std::invalid_argument("cbf: max_pairs must be >= 1");
}

LinearConstraint build_constraint(const PlanningScene& scene, const RobotModel& model,
                                  const Eigen::VectorXd& q, const PairResult& pair,
                                  const CbfParams& params) {
  params.validate();
  const DistanceResult& d = pair.dist;
  const int link_a = scene.robot_bodies().at(pair.query.body_a).link;

  const Pose pose_a = model.link_pose(q, link_a);
  const Vec3 local_a = pose_a.inverse() * d.point_a;
  const Eigen::MatrixXd jac_a = model.point_jacobian(q, link_a, local_a);

  LinearConstraint c;
  c.pair = pair.query;

  double margin = 0.0;
  if (pair.query.kind == PairQuery::Kind::Environment) {
    c.coeffs = (d.normal.transpose() * jac_a).transpose();
    if (params.robust_margin) {
      const double j_bound = params.margin_mode == CbfParams::MarginMode::Global
                                 ? params.j_max
                                 : Eigen::JacobiSVD<Eigen::MatrixXd>(jac_a).singularValues()(0);
      margin = 2.0 * j_bound * params.q_dot_max;
    }
  } else {
    const int link_b = scene.robot_bodies().at(pair.query.body_b).link;
    const Pose pose_b = model.link_pose(q, link_b);
    const Vec3 local_b = pose_b.inverse() * d.point_b;
    const Eigen::MatrixXd jac_b = model.point_jacobian(q, link_b, local_b);
    c.coeffs = (d.normal.transpose() * (jac_a - jac_b)).transpose();
    if (params.robust_margin) {
      if (params.margin_mode == CbfParams::MarginMode::Global) {
        margin = 4.0 * params.j_max * params.q_dot_max;
      } else {
        const double ja = Eigen::JacobiSVD<Eigen::MatrixXd>(jac_a).singularValues()(0);
        const double jb = Eigen::JacobiSVD<Eigen::MatrixXd>(jac_b).singularValues()(0);
        margin = 2.0 * (ja + jb) * params.q_dot_max;
      }
    }
  }
  c.lower_bound = -params.alpha * d.signed_distance + margin;
  return c;
}

FilterResult filter_velocity(const Eigen::VectorXd& v_des,
                             const std::vector<LinearConstraint>& constraints,
                             const CbfParams& params) {
  params.validate();
  const long n = v_des.size();
  const long m = static_cast<long>(constraints.size());
  for (const LinearConstraint& c : constraints)
    if (c.coeffs.size() != n) throw std::invalid_argument("constraint dimension mismatch");

  // CBF rows first (nearest pair first), then the velocity box.
  Eigen::MatrixXd A(m + 2 * n, n);
  Eigen::VectorXd b(m + 2 * n);
  for (long i = 0; i < m; ++i) {
    A.row(i) = constraints[i].coeffs.transpose();
    b(i) = constraints[i].lower_bound;
  }
  for (long j = 0; j < n; ++j) {
    A.row(m + 2 * j).setZero();
    A(m + 2 * j, j) = 1.0;
    b(m + 2 * j) = -params.q_dot_max;
    A.row(m + 2 * j + 1).setZero();
    A(m + 2 * j + 1, j) = -1.0;
    b(m + 2 * j + 1) = -params.q_dot_max;
  }

  FilterResult out;
  try {
    const QpResult qp = solve_projection_qp(v_des, A, b);
    out.iterations = qp.iterations;
    if (qp.feasible) {
      out.v_star = qp.x;
      out.feasible = true;
      out.active_set = qp.active_set;
      out.slack = qp.slack.head(m);
      return out;
    }
  } catch (const SolverError&) {
    out.v_star = Eigen::VectorXd::Zero(n);
    out.feasible = false;
    out.slack = Eigen::VectorXd::Zero(m);
    return out;
  }

  // Inconsistent constraints: resolve with slack variables, minimizing the
  // squared violation while keeping the box on v hard.
  const double rho = 1e6;
  Eigen::VectorXd target(n + m);
  target << v_des, Eigen::VectorXd::Zero(m);
  Eigen::VectorXd weights(n + m);
  weights << Eigen::VectorXd::Ones(n), Eigen::VectorXd::Constant(m, rho);

  Eigen::MatrixXd Ar(2 * m + 2 * n, n + m);
  Eigen::VectorXd br(2 * m + 2 * n);
  Ar.setZero();
  for (long i = 0; i < m; ++i) {
    Ar.block(i, 0, 1, n) = constraints[i].coeffs.transpose();
    Ar(i, n + i) = 1.0;
    br(i) = constraints[i].lower_bound;
    Ar(m + i, n + i) = 1.0;
    br(m + i) = 0.0;
  }
  for (long j = 0; j < n; ++j) {
    Ar(2 * m + 2 * j, j) = 1.0;
    br(2 * m + 2 * j) = -params.q_dot_max;
    Ar(2 * m + 2 * j + 1, j) = -1.0;
    br(2 * m + 2 * j + 1) = -params.q_dot_max;
  }

  try {
    const QpResult relaxed = solve_projection_qp(target, Ar, br, weights);
    out.v_star = relaxed.x.head(n);
    out.iterations += relaxed.iterations;
  } catch (const SolverError&) {
    out.v_star = Eigen::VectorXd::Zero(n);
  }
  out.feasible = false;
  out.slack = Eigen::VectorXd(m);
  for (long i = 0; i < m; ++i)
    out.slack(i) = constraints[i].coeffs.dot(out.v_star) - constraints[i].lower_bound;
  return out;
}

CbfStepResult cbf_step(const RobotModel& model, const PlanningScene& scene,
                       const Eigen::VectorXd& q, const Eigen::VectorXd& v_des,
                       const CbfParams& params, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("cbf_step: dt must be > 0");
  params.validate();

  const SceneDistanceResult sd = min_signed_distance(scene, model, q);

  CbfStepResult out;
  out.h_min = sd.min_sd;
  out.any_pair_failed = sd.any_failed;
  if (!sd.pairs.empty()) out.nearest_pair = sd.pairs.front().query.label();

  std::vector<LinearConstraint> constraints;
  const int budget = std::min<int>(params.max_pairs, static_cast<int>(sd.pairs.size()));
  constraints.reserve(budget);
  for (int i = 0; i < budget; ++i) {
    if (sd.pairs[i].failed) {
      // Fail safe: an unevaluable pair poisons the step.
      out.qp_feasible = false;
      out.v_star = Eigen::VectorXd::Zero(q.size());
      out.q_next = q;
      return out;
    }
    constraints.push_back(build_constraint(scene, model, q, sd.pairs[i], params));
  }
  out.constraint_count = static_cast<int>(constraints.size());

  const FilterResult f = filter_velocity(v_des, constraints, params);
  out.v_star = f.v_star;
  out.qp_feasible = f.feasible;
  out.qp_iterations = f.iterations;
  out.q_next = f.feasible ? Eigen::VectorXd(q + dt * f.v_star) : q;
  return out;
}

void to_json(nlohmann::json& j, const CbfParams& p) {
  j = {{"alpha", p.alpha},
       {"robust_margin", p.robust_margin},
       {"margin_mode", p.margin_mode == CbfParams::MarginMode::Global ? "global" : "local"},
       {"j_max", p.j_max},
       {"q_dot_max", p.q_dot_max},
       {"max_pairs", p.max_pairs}};
}

void from_json(const nlohmann::json& j, CbfParams& p) {
  p = CbfParams{};
  p.alpha = j.value("alpha", p.alpha);
  p.robust_margin = j.value("robust_margin", p.robust_margin);
  const std::string mode = j.value("margin_mode", "global");
  if (mode == "global")
    p.margin_mode = CbfParams::MarginMode::Global;
  else if (mode == "local")
    p.margin_mode = CbfParams::MarginMode::Local;
  else
    throw std::invalid_argument("unknown margin_mode: " + mode);
  p.j_max = j.value("j_max", p.j_max);
  p.q_dot_max = j.value("q_dot_max", p.q_dot_max);
  p.max_pairs = j.value("max_pairs", p.max_pairs);
}

}  // namespace sfilter
