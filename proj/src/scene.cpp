#include "sfilter/scene.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace sfilter {

namespace {

std::pair<std::string, std::string> ordered(const std::string& a, const std::string& b) {
  return a <= b ? std::make_pair(a, b) : std::make_pair(b, a);
}

}  // namespace

PlanningScene::PlanningScene(std::vector<Obstacle> obstacles,
                             std::vector<BodyAttachment> robot_bodies,
                             std::vector<std::pair<std::string, std::string>> allowed_pairs,
                             std::map<std::string, std::string> metadata)
    : obstacles_(std::move(obstacles)),
      robot_bodies_(std::move(robot_bodies)),
      metadata_(std::move(metadata)) {
  std::set<std::string> names;
  for (const Obstacle& o : obstacles_) {
    o.shape.validate();
    if (o.name.empty()) throw std::invalid_argument("obstacle without a name");
    if (!names.insert(o.name).second)
      throw std::invalid_argument("duplicate obstacle name: " + o.name);
  }
  std::set<std::string> body_names;
  for (size_t i = 0; i < robot_bodies_.size(); ++i) {
    BodyAttachment& b = robot_bodies_[i];
    if (b.name.empty()) b.name = "link" + std::to_string(b.link) + "_geom" + std::to_string(i);
    if (!body_names.insert(b.name).second)
      throw std::invalid_argument("duplicate robot body name: " + b.name);
  }
  for (const auto& p : allowed_pairs) {
    const bool known_a = names.count(p.first) || body_names.count(p.first);
    const bool known_b = names.count(p.second) || body_names.count(p.second);
    if (!known_a || !known_b)
      throw std::invalid_argument("allowed pair references unknown body: " + p.first + "/" +
                                  p.second);
    allowed_pairs_.insert(ordered(p.first, p.second));
  }
  // Same-link and adjacent-link bodies are exempt from self checks by default.
  for (size_t i = 0; i < robot_bodies_.size(); ++i)
    for (size_t j = i + 1; j < robot_bodies_.size(); ++j)
      if (std::abs(robot_bodies_[i].link - robot_bodies_[j].link) <= 1)
        allowed_pairs_.insert(ordered(robot_bodies_[i].name, robot_bodies_[j].name));
}

int PlanningScene::obstacle_index(const std::string& name) const {
  for (size_t i = 0; i < obstacles_.size(); ++i)
    if (obstacles_[i].name == name) return static_cast<int>(i);
  return -1;
}

bool PlanningScene::pair_allowed(const std::string& a, const std::string& b) const {
  return allowed_pairs_.count(ordered(a, b)) > 0;
}

PlanningScene PlanningScene::with_enabled(const std::string& obstacle, bool enabled) const {
  PlanningScene copy = *this;
  const int idx = copy.obstacle_index(obstacle);
  if (idx < 0) throw std::invalid_argument("unknown obstacle: " + obstacle);
  copy.obstacles_[idx].enabled = enabled;
  return copy;
}

PlanningScene PlanningScene::with_obstacle_pose(const std::string& obstacle,
                                                const Pose& pose) const {
  PlanningScene copy = *this;
  const int idx = copy.obstacle_index(obstacle);
  if (idx < 0) throw std::invalid_argument("unknown obstacle: " + obstacle);
  copy.obstacles_[idx].pose = pose;
  return copy;
}

std::vector<PairQuery> active_pairs(const PlanningScene& scene) {
  std::vector<PairQuery> env;
  for (size_t a = 0; a < scene.robot_bodies().size(); ++a) {
    for (size_t o = 0; o < scene.obstacles().size(); ++o) {
      const Obstacle& obs = scene.obstacles()[o];
      if (!obs.enabled) continue;
      const std::string& ra = scene.robot_bodies()[a].name;
      if (scene.pair_allowed(ra, obs.name)) continue;
      PairQuery q;
      q.kind = PairQuery::Kind::Environment;
      q.body_a = static_cast<int>(a);
      q.body_b = static_cast<int>(o);
      q.name_a = ra;
      q.name_b = obs.name;
      env.push_back(q);
    }
  }
  std::vector<PairQuery> self;
  for (size_t a = 0; a < scene.robot_bodies().size(); ++a) {
    for (size_t b = a + 1; b < scene.robot_bodies().size(); ++b) {
      const std::string& na = scene.robot_bodies()[a].name;
      const std::string& nb = scene.robot_bodies()[b].name;
      if (scene.pair_allowed(na, nb)) continue;
      PairQuery q;
      q.kind = PairQuery::Kind::Self;
      q.body_a = static_cast<int>(a);
      q.body_b = static_cast<int>(b);
      q.name_a = na;
      q.name_b = nb;
      self.push_back(q);
    }
  }
  auto by_name = [](const PairQuery& x, const PairQuery& y) {
    return std::tie(x.name_a, x.name_b) < std::tie(y.name_a, y.name_b);
  };
  std::sort(env.begin(), env.end(), by_name);
  std::sort(self.begin(), self.end(), by_name);
  env.insert(env.end(), self.begin(), self.end());
  return env;
}

SceneDistanceResult min_signed_distance(const PlanningScene& scene, const RobotModel& model,
                                        const Eigen::VectorXd& q) {
  SceneDistanceResult out;
  const std::vector<PairQuery> pairs = active_pairs(scene);
  if (pairs.empty()) return out;

  const std::vector<Pose> link_poses = model.link_poses(q);
  std::vector<Pose> body_poses(scene.robot_bodies().size());
  for (size_t i = 0; i < scene.robot_bodies().size(); ++i) {
    const BodyAttachment& b = scene.robot_bodies()[i];
    body_poses[i] = link_poses[b.link] * b.local_pose;
  }

  out.pairs.reserve(pairs.size());
  for (const PairQuery& pq : pairs) {
    PairResult pr;
    pr.query = pq;
    const BodyAttachment& body_a = scene.robot_bodies()[pq.body_a];
    try {
      if (pq.kind == PairQuery::Kind::Environment) {
        const Obstacle& obs = scene.obstacles()[pq.body_b];
        pr.dist = signed_distance(body_a.shape, body_poses[pq.body_a], obs.shape, obs.pose);
      } else {
        const BodyAttachment& body_b = scene.robot_bodies()[pq.body_b];
        pr.dist =
            signed_distance(body_a.shape, body_poses[pq.body_a], body_b.shape, body_poses[pq.body_b]);
      }
    } catch (const ProximityError&) {
      // Fail safe: treat the pair as maximally penetrating.
      pr.failed = true;
      pr.dist.signed_distance = -std::numeric_limits<double>::infinity();
      out.any_failed = true;
    }
    pr.dist.body_a = pq.name_a;
    pr.dist.body_b = pq.name_b;
    out.pairs.push_back(pr);
  }
  std::stable_sort(out.pairs.begin(), out.pairs.end(), [](const PairResult& x, const PairResult& y) {
    return x.dist.signed_distance < y.dist.signed_distance;
  });
  out.min_sd = out.pairs.front().dist.signed_distance;
  return out;
}

double scene_difference(const PlanningScene& scene_a, const PlanningScene& scene_b,
                        const SceneDiffParams& params) {
  std::set<std::string> names;
  for (const Obstacle& o : scene_a.obstacles()) names.insert(o.name);
  for (const Obstacle& o : scene_b.obstacles()) names.insert(o.name);

  double total = 0.0;
  for (const std::string& name : names) {
    const int ia = scene_a.obstacle_index(name);
    const int ib = scene_b.obstacle_index(name);
    if (ia < 0 || ib < 0) {
      total += params.missing_penalty;
      continue;
    }
    const Pose& pa = scene_a.obstacles()[ia].pose;
    const Pose& pb = scene_b.obstacles()[ib].pose;
    const double translation = (pa.translation - pb.translation).norm();
    const Mat3 rel = pa.rotation.transpose() * pb.rotation;
    const Vec3 skew(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
    const double angle = std::atan2(0.5 * skew.norm(), 0.5 * (rel.trace() - 1.0));
    total += translation + params.rotation_weight * angle;
  }
  return total;
}

PlanningScene apply_event(const PlanningScene& scene, const SceneEvent& event) {
  switch (event.action) {
    case SceneEvent::Action::Enable:
      return scene.with_enabled(event.obstacle, true);
    case SceneEvent::Action::Disable:
      return scene.with_enabled(event.obstacle, false);
    case SceneEvent::Action::Move:
      return scene.with_obstacle_pose(event.obstacle, event.pose);
  }
  return scene;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

PlanningScene scene_from_json(const nlohmann::json& j, const RobotModel& model) {
  std::vector<Obstacle> obstacles;
  if (j.contains("obstacles")) {
    for (const auto& jo : j.at("obstacles")) {
      Obstacle o;
      o.name = jo.at("name").get<std::string>();
      jo.at("shape").get_to(o.shape);
      if (jo.contains("pose")) jo.at("pose").get_to(o.pose);
      o.enabled = jo.value("enabled", true);
      obstacles.push_back(std::move(o));
    }
  }
  std::vector<std::pair<std::string, std::string>> allowed;
  if (j.contains("allowed_pairs")) {
    for (const auto& jp : j.at("allowed_pairs")) {
      if (!jp.is_array() || jp.size() != 2)
        throw std::invalid_argument("allowed_pairs entries must be [a, b]");
      allowed.emplace_back(jp[0].get<std::string>(), jp[1].get<std::string>());
    }
  }
  std::map<std::string, std::string> metadata;
  if (j.contains("metadata"))
    metadata = j.at("metadata").get<std::map<std::string, std::string>>();
  return PlanningScene(std::move(obstacles), model.geometry(), std::move(allowed),
                       std::move(metadata));
}

nlohmann::json scene_to_json(const PlanningScene& scene) {
  nlohmann::json obstacles = nlohmann::json::array();
  for (const Obstacle& o : scene.obstacles()) {
    nlohmann::json jo;
    jo["name"] = o.name;
    to_json(jo["shape"], o.shape);
    to_json(jo["pose"], o.pose);
    jo["enabled"] = o.enabled;
    obstacles.push_back(jo);
  }
  nlohmann::json allowed = nlohmann::json::array();
  for (const auto& p : scene.allowed_pairs())
    allowed.push_back(nlohmann::json::array({p.first, p.second}));
  nlohmann::json j{{"obstacles", obstacles}, {"allowed_pairs", allowed}};
  if (!scene.metadata().empty()) j["metadata"] = scene.metadata();
  return j;
}

PlanningScene load_scene(const std::string& path, const RobotModel& model) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene: " + path);
  nlohmann::json j;
  in >> j;
  return scene_from_json(j, model);
}

void to_json(nlohmann::json& j, const SceneEvent& e) {
  j["time"] = e.time;
  j["obstacle"] = e.obstacle;
  switch (e.action) {
    case SceneEvent::Action::Enable:
      j["action"] = "enable";
      break;
    case SceneEvent::Action::Disable:
      j["action"] = "disable";
      break;
    case SceneEvent::Action::Move:
      j["action"] = "move";
      to_json(j["pose"], e.pose);
      break;
  }
}

void from_json(const nlohmann::json& j, SceneEvent& e) {
  e.time = j.at("time").get<double>();
  e.obstacle = j.at("obstacle").get<std::string>();
  const std::string action = j.at("action").get<std::string>();
  if (action == "enable")
    e.action = SceneEvent::Action::Enable;
  else if (action == "disable")
    e.action = SceneEvent::Action::Disable;
  else if (action == "move") {
    e.action = SceneEvent::Action::Move;
    j.at("pose").get_to(e.pose);
  } else {
    throw std::invalid_argument("unknown scene event action: " + action);
  }
}

}  // namespace sfilter
