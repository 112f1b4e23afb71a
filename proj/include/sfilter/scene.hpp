#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sfilter/geometry.hpp"
#include "sfilter/json_fwd.hpp"
#include "sfilter/kinematics.hpp"

namespace sfilter {

struct Obstacle {
  std::string name;
  Shape shape;
  Pose pose;
  bool enabled = true;
};

/// One collision query between a robot body and either an obstacle
/// (Environment) or another robot body (Self).
struct PairQuery {
  enum class Kind { Environment, Self };

  Kind kind = Kind::Environment;
  int body_a = 0;  // robot body index
  int body_b = 0;  // obstacle index, or robot body index for Self
  std::string name_a;
  std::string name_b;

  std::string label() const { return name_a + "|" + name_b; }
};

/// Immutable snapshot of the collision world: obstacles, the robot's
/// collision bodies, and the allowed-collision set. Scene updates are
/// expressed by deriving a new snapshot (with_* helpers).
class PlanningScene {
 public:
  PlanningScene() = default;
  PlanningScene(std::vector<Obstacle> obstacles, std::vector<BodyAttachment> robot_bodies,
                std::vector<std::pair<std::string, std::string>> allowed_pairs = {},
                std::map<std::string, std::string> metadata = {});

  const std::vector<Obstacle>& obstacles() const { return obstacles_; }
  const std::vector<BodyAttachment>& robot_bodies() const { return robot_bodies_; }
  const std::set<std::pair<std::string, std::string>>& allowed_pairs() const {
    return allowed_pairs_;
  }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }

  int obstacle_index(const std::string& name) const;  // -1 when absent
  bool pair_allowed(const std::string& a, const std::string& b) const;

  PlanningScene with_enabled(const std::string& obstacle, bool enabled) const;
  PlanningScene with_obstacle_pose(const std::string& obstacle, const Pose& pose) const;

 private:
  std::vector<Obstacle> obstacles_;
  std::vector<BodyAttachment> robot_bodies_;
  std::set<std::pair<std::string, std::string>> allowed_pairs_;
  std::map<std::string, std::string> metadata_;
};

/// Environment pairs first, then self pairs, each block ordered
/// lexicographically by body names. Disabled obstacles and allowed pairs are
/// excluded; robot bodies on the same or adjacent links are allowed by
/// default.
std::vector<PairQuery> active_pairs(const PlanningScene& scene);

struct PairResult {
  PairQuery query;
  DistanceResult dist;
  bool failed = false;
};

struct SceneDistanceResult {
  double min_sd = std::numeric_limits<double>::infinity();
  std::vector<PairResult> pairs;  // sorted ascending by signed distance
  bool any_failed = false;
};

/// Signed distance of every active pair at configuration q. A pair whose
/// proximity query fails numerically is kept with signed distance -inf so
/// the caller fails safe.
SceneDistanceResult min_signed_distance(const PlanningScene& scene, const RobotModel& model,
                                        const Eigen::VectorXd& q);

struct SceneDiffParams {
  double rotation_weight = 0.5;    // m per rad of geodesic rotation angle
  double missing_penalty = 10.0;   // m, per obstacle absent from one scene
};

/// Sum over obstacles of translation distance plus weighted geodesic
/// rotation angle between the two scenes' poses.
double scene_difference(const PlanningScene& scene_a, const PlanningScene& scene_b,
                        const SceneDiffParams& params = {});

/// Scene event applied between filter steps (new snapshot semantics).
struct SceneEvent {
  enum class Action { Enable, Disable, Move };

  double time = 0.0;
  std::string obstacle;
  Action action = Action::Disable;
  Pose pose;  // used by Move
};

PlanningScene apply_event(const PlanningScene& scene, const SceneEvent& event);

PlanningScene scene_from_json(const nlohmann::json& j, const RobotModel& model);
nlohmann::json scene_to_json(const PlanningScene& scene);
PlanningScene load_scene(const std::string& path, const RobotModel& model);

void to_json(nlohmann::json& j, const SceneEvent& e);
void from_json(const nlohmann::json& j, SceneEvent& e);

}  // namespace sfilter
