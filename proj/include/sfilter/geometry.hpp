#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

#include "sfilter/json_fwd.hpp"

namespace sfilter {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Rigid placement: world_point = rotation * local_point + translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  /// xyz translation plus roll-pitch-yaw (URDF convention, R = Rz * Ry * Rx).
  static Pose from_rpy(const Vec3& xyz, const Vec3& rpy);

  Pose operator*(const Pose& rhs) const;
  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }
  Pose inverse() const;

  /// R'R = I within tol and det(R) = +1.
  bool is_rigid(double tol = 1e-9) const;
};

/// Convex collision geometry. Capsules are aligned with the local z axis,
/// segment endpoints at (0, 0, +-half_length). Hull vertices are local-frame
/// points whose convex hull is the shape; they must span 3D.
struct Shape {
  enum class Kind { Sphere, Capsule, Box, Hull };

  Kind kind = Kind::Sphere;
  double radius = 0.0;
  double half_length = 0.0;
  Vec3 half_extents = Vec3::Zero();
  std::vector<Vec3> vertices;

  static Shape sphere(double radius);
  static Shape capsule(double half_length, double radius);
  static Shape box(const Vec3& half_extents);
  static Shape hull(std::vector<Vec3> vertices);

  /// Max distance from the local origin to any point of the shape.
  double bounding_radius() const;

  /// Throws std::invalid_argument on non-positive parameters or a
  /// degenerate (rank < 3) hull vertex set.
  void validate() const;
};

/// Proximity query result for one body pair.
///
/// Conventions: normal is unit length and points from body B toward body A
/// (the direction that, applied to A, increases separation), and
/// point_a - point_b == signed_distance * normal holds for both separated
/// and penetrating pairs.
struct DistanceResult {
  double signed_distance = 0.0;
  Vec3 point_a = Vec3::Zero();
  Vec3 point_b = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  std::string body_a;
  std::string body_b;

  DistanceResult swapped() const;
};

/// Numerical failure inside GJK/EPA. Carries the best estimate available
/// when the iteration budget ran out or the polytope degenerated; the
/// estimate's signed_distance is conservative (never less penetrating than
/// the true value).
class ProximityError : public std::runtime_error {
 public:
  ProximityError(const std::string& what, DistanceResult best)
      : std::runtime_error(what), best_estimate(std::move(best)) {}

  DistanceResult best_estimate;
};

struct GjkOutcome {
  bool intersecting = false;
  DistanceResult result;  // valid only when !intersecting
};

/// Distance query between separated bodies. Returns the marker
/// (intersecting = true) when the surfaces overlap; penetration depth is
/// then obtained from epa_penetration.
GjkOutcome gjk_distance(const Shape& shape_a, const Pose& pose_a,
                        const Shape& shape_b, const Pose& pose_b,
                        int max_iterations = 128);

/// Penetration query for overlapping bodies: signed_distance < 0 with
/// |signed_distance| the minimal translation that separates the pair.
DistanceResult epa_penetration(const Shape& shape_a, const Pose& pose_a,
                               const Shape& shape_b, const Pose& pose_b,
                               int max_iterations = 128);

/// Signed distance: separation distance when disjoint, minus penetration
/// depth when overlapping. Sphere/capsule pairs use closed forms; all other
/// pairs go through GJK and, on core overlap, EPA.
DistanceResult signed_distance(const Shape& shape_a, const Pose& pose_a,
                               const Shape& shape_b, const Pose& pose_b);

/// Farthest point of the shape surface in world direction `dir`.
Vec3 support_point(const Shape& shape, const Pose& pose, const Vec3& dir);

void to_json(nlohmann::json& j, const Shape& s);
void from_json(const nlohmann::json& j, Shape& s);
void to_json(nlohmann::json& j, const Pose& p);
void from_json(const nlohmann::json& j, Pose& p);

}  // namespace sfilter
