#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sfilter/cache.hpp"
#include "sfilter/sim.hpp"

namespace sfilter {

/// A runnable experiment description: which robot, scene and reference to
/// use, the parameter blocks, and timed scene events.
struct Scenario {
  std::string name;
  std::string model_path;
  std::string scene_path;
  std::string reference_path;  // trajectory CSV or JSON
  std::string behavior;

  enum class Mode { Kinematic, Dynamic };
  Mode mode = Mode::Kinematic;

  double dt = 0.01;
  double t_max = 30.0;
  unsigned seed = 0;

  CbfParams cbf;          // cbf.j_max <= 0 requests jacobian_norm_bound at load
  TrackerParams tracker;
  TrackingPlant plant;
  std::vector<double> qdot0;          // dynamic mode, defaults to zero
  std::optional<std::vector<double>> q0;  // defaults to the reference start
  std::vector<SceneEvent> events;
};

Scenario scenario_from_json(const nlohmann::json& j, const std::string& base_dir);
Scenario load_scenario(const std::string& path);

/// Materialized scenario inputs.
struct ScenarioAssets {
  RobotModel model;
  PlanningScene scene;
  Trajectory reference;
  Eigen::VectorXd q0;
  Eigen::VectorXd qdot0;
  CbfParams cbf;  // j_max resolved
};

ScenarioAssets prepare_scenario(const Scenario& scenario);

// CLI entry points. All exit codes: 0 success, 1 error, 2 not converged,
// 3 cache run without a usable reference or fallback.
int cmd_filter(const Scenario& scenario, const std::string& out_dir);
int cmd_bench(const Scenario& scenario, int iterations, const std::string& out_path);

struct CacheCmdOptions {
  std::string cache_path;
  std::string model_path;
  std::string behavior;
  std::string scene_path;
  std::string state_path;      // JointState JSON
  std::string fallback_cmd;    // invoked as: cmd <scene.json> <state.json> <out.csv>
  std::string params_path;     // optional scenario JSON supplying cbf/tracker/dt/t_max
  std::string trajectory_path; // insert: trajectory to add; run: output path
};

int cmd_cache_query(const CacheCmdOptions& opt);
int cmd_cache_run(const CacheCmdOptions& opt);
int cmd_cache_insert(const CacheCmdOptions& opt);

bool log_enabled();
void log_line(const std::string& msg);

}  // namespace sfilter
