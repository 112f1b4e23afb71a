#include "sfilter/kinematics.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <random>

namespace sfilter {

namespace {

Pose joint_motion(const Joint& joint, double value) {
  Pose m;
  if (joint.type == Joint::Type::Revolute) {
    m.rotation = Eigen::AngleAxisd(value, joint.axis).toRotationMatrix();
  } else {
    m.translation = value * joint.axis;
  }
  return m;
}

}  // namespace

RobotModel::RobotModel(std::vector<Joint> joints, std::vector<BodyAttachment> geometry)
    : joints_(std::move(joints)), geometry_(std::move(geometry)) {
  for (size_t i = 0; i < joints_.size(); ++i) {
    const Joint& j = joints_[i];
    if (std::abs(j.axis.norm() - 1.0) > 1e-9)
      throw std::invalid_argument("joint " + std::to_string(i) + ": axis must be unit length");
    if (!(j.velocity > 0.0))
      throw std::invalid_argument("joint " + std::to_string(i) + ": velocity bound must be > 0");
    if (!(j.upper >= j.lower))
      throw std::invalid_argument("joint " + std::to_string(i) + ": limits out of order");
    if (!j.origin.is_rigid(1e-6))
      throw std::invalid_argument("joint " + std::to_string(i) + ": origin is not rigid");
  }
  for (size_t g = 0; g < geometry_.size(); ++g) {
    BodyAttachment& body = geometry_[g];
    if (body.link < 0 || body.link >= joint_count())
      throw std::invalid_argument("geometry " + std::to_string(g) + ": bad link index");
    body.shape.validate();
    if (body.name.empty())
      body.name = "link" + std::to_string(body.link) + "_geom" + std::to_string(g);
  }
}

Eigen::VectorXd RobotModel::lower_limits() const {
  Eigen::VectorXd v(joint_count());
  for (int i = 0; i < joint_count(); ++i) v(i) = joints_[i].lower;
  return v;
}

Eigen::VectorXd RobotModel::upper_limits() const {
  Eigen::VectorXd v(joint_count());
  for (int i = 0; i < joint_count(); ++i) v(i) = joints_[i].upper;
  return v;
}

Eigen::VectorXd RobotModel::velocity_limits() const {
  Eigen::VectorXd v(joint_count());
  for (int i = 0; i < joint_count(); ++i) v(i) = joints_[i].velocity;
  return v;
}

bool RobotModel::within_limits(const Eigen::VectorXd& q, double slack) const {
  check_config(q);
  for (int i = 0; i < joint_count(); ++i)
    if (q(i) < joints_[i].lower - slack || q(i) > joints_[i].upper + slack) return false;
  return true;
}

void RobotModel::check_config(const Eigen::VectorXd& q) const {
  if (q.size() != joint_count())
    throw std::invalid_argument("configuration has wrong dimension: got " +
                                std::to_string(q.size()) + ", expected " +
                                std::to_string(joint_count()));
}

Pose RobotModel::link_pose(const Eigen::VectorXd& q, int link) const {
  check_config(q);
  if (link < 0 || link >= joint_count()) throw std::invalid_argument("bad link index");
  Pose t;
  for (int i = 0; i <= link; ++i) t = t * joints_[i].origin * joint_motion(joints_[i], q(i));
  return t;
}

std::vector<Pose> RobotModel::link_poses(const Eigen::VectorXd& q) const {
  check_config(q);
  std::vector<Pose> poses(joint_count());
  Pose t;
  for (int i = 0; i < joint_count(); ++i) {
    t = t * joints_[i].origin * joint_motion(joints_[i], q(i));
    poses[i] = t;
  }
  return poses;
}

Vec3 RobotModel::forward_kinematics(const Eigen::VectorXd& q, int link,
                                    const Vec3& local_point) const {
  return link_pose(q, link) * local_point;
}

Eigen::MatrixXd RobotModel::point_jacobian(const Eigen::VectorXd& q, int link,
                                           const Vec3& local_point) const {
  check_config(q);
  if (link < 0 || link >= joint_count()) throw std::invalid_argument("bad link index");

  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3, joint_count());
  Pose t;
  std::vector<Vec3> origins(link + 1);
  std::vector<Vec3> axes(link + 1);
  for (int i = 0; i <= link; ++i) {
    const Pose pre = t * joints_[i].origin;  // joint frame before motion
    origins[i] = pre.translation;
    axes[i] = pre.rotation * joints_[i].axis;
    t = pre * joint_motion(joints_[i], q(i));
  }
  const Vec3 p = t * local_point;
  for (int i = 0; i <= link; ++i) {
    if (joints_[i].type == Joint::Type::Revolute)
      jac.col(i) = axes[i].cross(p - origins[i]);
    else
      jac.col(i) = axes[i];
  }
  return jac;
}

double jacobian_norm_bound(const RobotModel& model, int sample_count, unsigned seed,
                           double safety_factor) {
  if (sample_count < 1) throw std::invalid_argument("sample_count must be >= 1");
  if (safety_factor < 1.0) throw std::invalid_argument("safety factor must be >= 1");

  static const std::array<Vec3, 14> dirs = [] {
    std::array<Vec3, 14> d;
    int k = 0;
    for (int axis = 0; axis < 3; ++axis) {
      Vec3 e = Vec3::Zero();
      e(axis) = 1.0;
      d[k++] = e;
      d[k++] = -e;
    }
    const double s = 1.0 / std::sqrt(3.0);
    for (int sx : {-1, 1})
      for (int sy : {-1, 1})
        for (int sz : {-1, 1}) d[k++] = Vec3(sx * s, sy * s, sz * s);
    return d;
  }();

  std::mt19937_64 rng(seed);
  const Eigen::VectorXd lo = model.lower_limits();
  const Eigen::VectorXd hi = model.upper_limits();
  const int n = model.joint_count();

  double worst = 0.0;
  Eigen::VectorXd q(n);
  for (int s = 0; s < sample_count; ++s) {
    for (int i = 0; i < n; ++i) {
      std::uniform_real_distribution<double> u(lo(i), hi(i));
      q(i) = u(rng);
    }
    const std::vector<Pose> poses = model.link_poses(q);

    auto probe = [&](int link, const Vec3& local_point) {
      const Eigen::MatrixXd jac = model.point_jacobian(q, link, local_point);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac);
      worst = std::max(worst, svd.singularValues()(0));
    };

    if (model.geometry().empty()) {
      for (int link = 0; link < n; ++link) probe(link, Vec3::Zero());
    } else {
      for (const BodyAttachment& body : model.geometry()) {
        const Pose world = poses[body.link] * body.local_pose;
        const Pose link_inv = poses[body.link].inverse();
        probe(body.link, body.local_pose.translation);
        for (const Vec3& d : dirs) probe(body.link, link_inv * support_point(body.shape, world, d));
      }
    }
  }
  return worst * safety_factor;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

Vec3 vec3_at(const nlohmann::json& j, const char* key, const Vec3& fallback) {
  if (!j.contains(key)) return fallback;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3) throw std::invalid_argument("expected 3-vector");
  return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
}

}  // namespace

RobotModel robot_model_from_json(const nlohmann::json& j) {
  std::vector<Joint> joints;
  for (const auto& jj : j.at("joints")) {
    Joint joint;
    const std::string type = jj.value("type", "revolute");
    if (type == "revolute")
      joint.type = Joint::Type::Revolute;
    else if (type == "prismatic")
      joint.type = Joint::Type::Prismatic;
    else
      throw std::invalid_argument("unknown joint type: " + type);
    joint.axis = vec3_at(jj, "axis", Vec3::UnitZ());
    if (jj.contains("origin")) jj.at("origin").get_to(joint.origin);
    if (jj.contains("limits")) {
      const auto& lim = jj.at("limits");
      joint.lower = lim.value("lower", -M_PI);
      joint.upper = lim.value("upper", M_PI);
      joint.velocity = lim.value("velocity", 1.0);
    }
    joints.push_back(joint);
  }
  std::vector<BodyAttachment> geometry;
  if (j.contains("geometry")) {
    for (const auto& jg : j.at("geometry")) {
      BodyAttachment body;
      body.link = jg.at("link").get<int>();
      jg.at("shape").get_to(body.shape);
      if (jg.contains("origin")) jg.at("origin").get_to(body.local_pose);
      body.name = jg.value("name", "");
      geometry.push_back(body);
    }
  }
  return RobotModel(std::move(joints), std::move(geometry));
}

nlohmann::json robot_model_to_json(const RobotModel& model) {
  nlohmann::json joints = nlohmann::json::array();
  for (const Joint& j : model.joints()) {
    nlohmann::json jj;
    jj["type"] = j.type == Joint::Type::Revolute ? "revolute" : "prismatic";
    jj["axis"] = {j.axis.x(), j.axis.y(), j.axis.z()};
    to_json(jj["origin"], j.origin);
    jj["limits"] = {{"lower", j.lower}, {"upper", j.upper}, {"velocity", j.velocity}};
    joints.push_back(jj);
  }
  nlohmann::json geometry = nlohmann::json::array();
  for (const BodyAttachment& b : model.geometry()) {
    nlohmann::json jb;
    jb["link"] = b.link;
    to_json(jb["shape"], b.shape);
    to_json(jb["origin"], b.local_pose);
    jb["name"] = b.name;
    geometry.push_back(jb);
  }
  return {{"joints", joints}, {"geometry", geometry}};
}

RobotModel load_robot_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open robot model: " + path);
  nlohmann::json j;
  in >> j;
  return robot_model_from_json(j);
}

void to_json(nlohmann::json& j, const JointState& s) {
  j = nlohmann::json{{"q", std::vector<double>(s.q.data(), s.q.data() + s.q.size())}};
  if (s.q_dot)
    j["q_dot"] = std::vector<double>(s.q_dot->data(), s.q_dot->data() + s.q_dot->size());
}

void from_json(const nlohmann::json& j, JointState& s) {
  const auto q = j.at("q").get<std::vector<double>>();
  s.q = Eigen::Map<const Eigen::VectorXd>(q.data(), static_cast<long>(q.size()));
  if (j.contains("q_dot")) {
    const auto qd = j.at("q_dot").get<std::vector<double>>();
    if (qd.size() != q.size()) throw std::invalid_argument("q_dot dimension mismatch");
    s.q_dot = Eigen::Map<const Eigen::VectorXd>(qd.data(), static_cast<long>(qd.size()));
  }
}

}  // namespace sfilter
