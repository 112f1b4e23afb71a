#pragma once

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "sfilter/geometry.hpp"
#include "sfilter/json_fwd.hpp"

namespace sfilter {

struct Joint {
  enum class Type { Revolute, Prismatic };

  Type type = Type::Revolute;
  Vec3 axis = Vec3::UnitZ();  // unit vector in the joint frame
  Pose origin;                // parent link frame -> joint frame
  double lower = -M_PI;
  double upper = M_PI;
  double velocity = 1.0;  // > 0
};

/// Collision geometry rigidly attached to a link.
struct BodyAttachment {
  int link = 0;
  Shape shape;
  Pose local_pose;
  std::string name;
};

/// Serial kinematic chain. Link i is the frame that moves with joint i;
/// the world frame is the parent of joint 0.
class RobotModel {
 public:
  RobotModel() = default;
  RobotModel(std::vector<Joint> joints, std::vector<BodyAttachment> geometry);

  int joint_count() const { return static_cast<int>(joints_.size()); }
  const std::vector<Joint>& joints() const { return joints_; }
  const std::vector<BodyAttachment>& geometry() const { return geometry_; }

  Eigen::VectorXd lower_limits() const;
  Eigen::VectorXd upper_limits() const;
  Eigen::VectorXd velocity_limits() const;
  bool within_limits(const Eigen::VectorXd& q, double slack = 0.0) const;

  /// World pose of link `link` (frame after joint `link` moves).
  Pose link_pose(const Eigen::VectorXd& q, int link) const;
  std::vector<Pose> link_poses(const Eigen::VectorXd& q) const;

  /// World position of a point rigidly attached to a link.
  Vec3 forward_kinematics(const Eigen::VectorXd& q, int link, const Vec3& local_point) const;

  /// 3 x n positional Jacobian of the attached point. Columns of joints that
  /// are not ancestors of the link are exactly zero.
  Eigen::MatrixXd point_jacobian(const Eigen::VectorXd& q, int link, const Vec3& local_point) const;

 private:
  void check_config(const Eigen::VectorXd& q) const;

  std::vector<Joint> joints_;
  std::vector<BodyAttachment> geometry_;
};

struct JointState {
  Eigen::VectorXd q;
  std::optional<Eigen::VectorXd> q_dot;
};

/// Sampled upper bound on the spectral norm of the point Jacobian over the
/// joint-limit box, times a safety factor. Configurations are drawn with a
/// deterministic seed; at each one the Jacobian is probed at the attachment
/// centers and at surface support points of every collision body (link
/// origins when the model carries no geometry).
double jacobian_norm_bound(const RobotModel& model, int sample_count, unsigned seed,
                           double safety_factor = 1.25);

RobotModel robot_model_from_json(const nlohmann::json& j);
nlohmann::json robot_model_to_json(const RobotModel& model);
RobotModel load_robot_model(const std::string& path);

void to_json(nlohmann::json& j, const JointState& s);
void from_json(const nlohmann::json& j, JointState& s);

}  // namespace sfilter
