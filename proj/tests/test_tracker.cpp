#include <doctest.h>

#include <nlohmann/json.hpp>

#include "sfilter/tracker.hpp"
#include "test_support.hpp"

using namespace sfilter;

namespace {

Trajectory line_traj(const Eigen::VectorXd& from, const Eigen::VectorXd& to, double duration,
                     const std::string& behavior = "move") {
  Trajectory t;
  t.behavior = behavior;
  t.waypoints.push_back({0.0, from});
  t.waypoints.push_back({duration, to});
  return t;
}

RobotModel tool_arm() {
  Joint j0, j1;
  j0.axis = Vec3::UnitZ();
  j1.axis = Vec3::UnitZ();
  j1.origin = Pose::from_rpy(Vec3(1, 0, 0), Vec3::Zero());
  BodyAttachment tool;
  tool.link = 1;
  tool.shape = Shape::sphere(0.05);
  tool.local_pose = Pose::from_rpy(Vec3(1, 0, 0), Vec3::Zero());
  tool.name = "tool";
  return RobotModel({j0, j1}, {tool});
}

CbfParams loose_cbf() {
  CbfParams p;
  p.alpha = 3.0;
  p.robust_margin = false;
  p.q_dot_max = 2.0;
  return p;
}

}  // namespace

TEST_CASE("desired_velocity: linear law and saturation") {
  TrackerState state;
  state.params.k_p = 1.0;
  state.params.v_sat = 10.0;
  Eigen::VectorXd a(2), b(2);
  a << 0.4, 0.1;
  b << 0.5, -0.1;
  const Trajectory traj = line_traj(a, b, 1.0);
  state.index = 1;

  Eigen::VectorXd q(2);
  q << 0.4, 0.1;  // error (0.1, -0.2)
  Eigen::VectorXd v = desired_velocity(state, traj, q, 0.01);
  CHECK((v - Eigen::VectorXd{{0.1, -0.2}}).norm() < 1e-12);

  state.params.v_sat = 0.3;
  state.params.k_p = 10.0;
  q << -0.6, 0.1;  // 1.0 rad error on joint 0
  v = desired_velocity(state, traj, q, 0.01);
  CHECK(v(0) == doctest::Approx(0.3));
}

TEST_CASE("desired_velocity: advancement at a waypoint") {
  Eigen::VectorXd w0(1), w1(1), w2(1);
  w0 << 0.0;
  w1 << 0.5;
  w2 << 1.0;
  Trajectory traj;
  traj.behavior = "b";
  traj.waypoints = {{0, w0}, {1, w1}, {2, w2}};

  TrackerState state;
  state.params.k_p = 1.0;
  state.params.epsilon = 0.02;
  state.params.v_sat = 10.0;

  Eigen::VectorXd q(1);
  q << 0.5;  // exactly at waypoint 1... but index starts at 0
  state.index = 1;
  const Eigen::VectorXd v = desired_velocity(state, traj, q, 0.01);
  CHECK(state.index == 2);
  CHECK(v(0) == doctest::Approx(0.5));  // toward the next waypoint
}

TEST_CASE("desired_velocity: stall advances past an unreachable waypoint") {
  Eigen::VectorXd w0(1), w1(1);
  w0 << 1.0;
  w1 << 2.0;
  Trajectory traj;
  traj.behavior = "b";
  traj.waypoints = {{0, w0}, {1, w1}};

  TrackerState state;
  state.params.stall_timeout = 0.5;
  Eigen::VectorXd q(1);
  q << 0.0;
  // Robot pinned at q=0: distance to waypoint 0 never shrinks.
  for (int k = 0; k < 60; ++k) desired_velocity(state, traj, q, 0.01);
  CHECK(state.index == 1);  // skipped to the terminal waypoint
}

TEST_CASE("monotone index and strictly increasing output timestamps") {
  const RobotModel model = tool_arm();
  const PlanningScene empty_scene({}, model.geometry());
  Eigen::VectorXd from(2), to(2);
  from << 0, 0;
  to << 0.8, -0.5;
  const Trajectory ref = line_traj(from, to, 1.0);

  TrackerParams tp;
  tp.v_sat = 2.0;
  const RolloutResult r =
      run_filtered_tracking(model, empty_scene, ref, from, loose_cbf(), tp, 0.01, 10.0);
  CHECK(r.converged);
  for (size_t i = 1; i < r.output.waypoints.size(); ++i)
    CHECK(r.output.waypoints[i].t - r.output.waypoints[i - 1].t == doctest::Approx(0.01));
  // Terminal error within epsilon.
  CHECK((r.output.waypoints.back().q - to).norm() < tp.epsilon);
}

TEST_CASE("obstacle-free tracking stays on the reference") {
  const RobotModel model = tool_arm();
  const PlanningScene far_scene(
      {Obstacle{"far", Shape::sphere(0.1), Pose::from_rpy(Vec3(40, 0, 0), Vec3::Zero()), true}},
      model.geometry());
  Eigen::VectorXd from(2), to(2);
  from << 0.1, 0.1;
  to << 0.5, 0.4;
  const Trajectory ref = line_traj(from, to, 1.0);
  TrackerParams tp;
  const RolloutResult r =
      run_filtered_tracking(model, far_scene, ref, from, loose_cbf(), tp, 0.01, 10.0);
  CHECK(r.converged);
  CHECK((r.output.waypoints.back().q - to).norm() < tp.epsilon);
  // Straight-line motion between the endpoints stays within the segment envelope.
  for (const auto& wp : r.output.waypoints) {
    const double t01 = std::clamp((wp.q - from).dot(to - from) / (to - from).squaredNorm(), 0.0, 1.0);
    const Eigen::VectorXd proj = from + t01 * (to - from);
    CHECK((wp.q - proj).norm() < tp.epsilon + tp.v_sat * 0.01);
  }
}

TEST_CASE("reference clipping an obstacle deflects, reaches the goal, keeps h >= 0") {
  const RobotModel model = tool_arm();
  Eigen::VectorXd w0(2), w1(2), w2(2);
  w0 << 0.0, 0.0;
  w1 << 0.9, -0.9;
  w2 << 1.6, 0.0;
  Trajectory ref;
  ref.behavior = "move";
  ref.waypoints = {{0.0, w0}, {1.0, w1}, {2.0, w2}};

  // Obstacle placed so the reference tool path cuts into it near the middle
  // waypoint (a planner output invalidated by a moved obstacle).
  const Vec3 obstacle_center = model.forward_kinematics(w1, 1, Vec3(1, 0, 0)) + Vec3(-0.10, 0, 0);
  const PlanningScene scene(
      {Obstacle{"obs", Shape::sphere(0.18), Pose::from_rpy(obstacle_center, Vec3::Zero()), true}},
      model.geometry());

  TrackerParams tp;
  tp.v_sat = 1.5;

  // The unfiltered reference really collides.
  const PlanningScene empty({}, model.geometry());
  const RolloutResult raw =
      run_filtered_tracking(model, empty, ref, w0, loose_cbf(), tp, 0.005, 20.0);
  double ref_min_h = std::numeric_limits<double>::infinity();
  for (const TraceRow& row : raw.trace)
    ref_min_h = std::min(ref_min_h, min_signed_distance(scene, model, row.q).min_sd);
  CHECK(ref_min_h < -0.05);

  const RolloutResult r =
      run_filtered_tracking(model, scene, ref, w0, loose_cbf(), tp, 0.005, 20.0);
  CHECK(r.converged);
  CHECK(r.min_h >= -1e-4);
  CHECK((r.output.waypoints.back().q - w2).norm() < tp.epsilon);
}

TEST_CASE("reference inside an obstacle halts at the boundary, not converged") {
  const RobotModel model = tool_arm();
  // The goal puts the tool inside the obstacle.
  const PlanningScene scene(
      {Obstacle{"obs", Shape::sphere(0.3), Pose::from_rpy(Vec3(0, 2, 0), Vec3::Zero()), true}},
      model.geometry());
  Eigen::VectorXd from(2), to(2);
  from << 0.0, 0.0;
  to << M_PI / 2, 0.0;  // tool at (0, 2): obstacle center
  const Trajectory ref = line_traj(from, to, 1.0);
  TrackerParams tp;
  tp.stall_timeout = 1.0;
  const RolloutResult r =
      run_filtered_tracking(model, scene, ref, from, loose_cbf(), tp, 0.01, 6.0);
  CHECK_FALSE(r.converged);
  CHECK(r.min_h >= -1e-4);
  // It stopped close to the barrier boundary rather than far away.
  CHECK(r.trace.back().h_min < 0.1);
}

TEST_CASE("trajectory validation") {
  Trajectory t;
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  Eigen::VectorXd q1(1), q2(2);
  q1 << 0;
  q2 << 0, 0;
  t.waypoints = {{0.0, q1}, {1.0, q2}};
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  t.waypoints = {{0.0, q1}, {0.0, q1}};
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
}

TEST_CASE("trajectory json round trip") {
  Eigen::VectorXd a(2), b(2);
  a << 0.25, -0.5;
  b << 1.0, 0.125;
  const Trajectory t = line_traj(a, b, 2.0, "fryer_to_hanger");
  nlohmann::json j;
  to_json(j, t);
  Trajectory back;
  from_json(j, back);
  CHECK(back.behavior == t.behavior);
  REQUIRE(back.size() == t.size());
  for (size_t i = 0; i < t.size(); ++i) {
    CHECK(back.waypoints[i].t == t.waypoints[i].t);
    CHECK((back.waypoints[i].q - t.waypoints[i].q).norm() == 0.0);
  }
}
