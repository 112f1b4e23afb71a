#include "sfilter/geometry.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace sfilter {

namespace {

constexpr double kTiny = 1e-14;

Mat3 rpy_matrix(const Vec3& rpy) {
  const Eigen::AngleAxisd roll(rpy.x(), Vec3::UnitX());
  const Eigen::AngleAxisd pitch(rpy.y(), Vec3::UnitY());
  const Eigen::AngleAxisd yaw(rpy.z(), Vec3::UnitZ());
  return (yaw * pitch * roll).toRotationMatrix();
}

}  // namespace

Pose Pose::from_rpy(const Vec3& xyz, const Vec3& rpy) {
  Pose p;
  p.rotation = rpy_matrix(rpy);
  p.translation = xyz;
  return p;
}

Pose Pose::operator*(const Pose& rhs) const {
  Pose out;
  out.rotation = rotation * rhs.rotation;
  out.translation = rotation * rhs.translation + translation;
  return out;
}

Pose Pose::inverse() const {
  Pose out;
  out.rotation = rotation.transpose();
  out.translation = -(out.rotation * translation);
  return out;
}

bool Pose::is_rigid(double tol) const {
  const Mat3 err = rotation.transpose() * rotation - Mat3::Identity();
  return err.cwiseAbs().maxCoeff() <= tol && rotation.determinant() > 0.0;
}

Shape Shape::sphere(double radius) {
  Shape s;
  s.kind = Kind::Sphere;
  s.radius = radius;
  s.validate();
  return s;
}

Shape Shape::capsule(double half_length, double radius) {
  Shape s;
  s.kind = Kind::Capsule;
  s.half_length = half_length;
  s.radius = radius;
  s.validate();
  return s;
}

Shape Shape::box(const Vec3& half_extents) {
  Shape s;
  s.kind = Kind::Box;
  s.half_extents = half_extents;
  s.validate();
  return s;
}

Shape Shape::hull(std::vector<Vec3> vertices) {
  Shape s;
  s.kind = Kind::Hull;
  s.vertices = std::move(vertices);
  s.validate();
  return s;
}

double Shape::bounding_radius() const {
  switch (kind) {
    case Kind::Sphere:
      return radius;
    case Kind::Capsule:
      return half_length + radius;
    case Kind::Box:
      return half_extents.norm();
    case Kind::Hull: {
      double r = 0.0;
      for (const Vec3& v : vertices) r = std::max(r, v.norm());
      return r;
    }
  }
  return 0.0;
}

void Shape::validate() const {
  switch (kind) {
    case Kind::Sphere:
      if (!(radius > 0.0)) throw std::invalid_argument("sphere radius must be > 0");
      break;
    case Kind::Capsule:
      if (!(radius > 0.0) || !(half_length > 0.0))
        throw std::invalid_argument("capsule parameters must be > 0");
      break;
    case Kind::Box:
      if (!(half_extents.minCoeff() > 0.0))
        throw std::invalid_argument("box half extents must be > 0");
      break;
    case Kind::Hull: {
      if (vertices.size() < 4)
        throw std::invalid_argument("hull needs at least 4 vertices");
      Vec3 centroid = Vec3::Zero();
      for (const Vec3& v : vertices) centroid += v;
      centroid /= static_cast<double>(vertices.size());
      Eigen::Matrix3Xd m(3, vertices.size());
      for (size_t i = 0; i < vertices.size(); ++i) m.col(i) = vertices[i] - centroid;
      Eigen::JacobiSVD<Eigen::Matrix3Xd> svd(m);
      const auto& sv = svd.singularValues();
      if (sv(0) <= 0.0 || sv(2) <= 1e-9 * sv(0))
        throw std::invalid_argument("hull vertices do not span 3D");
      break;
    }
  }
}

DistanceResult DistanceResult::swapped() const {
  DistanceResult r = *this;
  std::swap(r.point_a, r.point_b);
  std::swap(r.body_a, r.body_b);
  r.normal = -normal;
  return r;
}

// ---------------------------------------------------------------------------
// Support machinery. GJK/EPA run on polytope "cores" (point, segment, box,
// hull) with round shapes handled as core + margin, so the iteration always
// terminates on exact polytope vertices.
// ---------------------------------------------------------------------------

namespace {

double core_margin(const Shape& s) {
  return (s.kind == Shape::Kind::Sphere || s.kind == Shape::Kind::Capsule) ? s.radius : 0.0;
}

Vec3 core_support(const Shape& s, const Pose& pose, const Vec3& dir_world) {
  const Vec3 d = pose.rotation.transpose() * dir_world;
  switch (s.kind) {
    case Shape::Kind::Sphere:
      return pose.translation;
    case Shape::Kind::Capsule:
      return pose * Vec3(0, 0, d.z() >= 0.0 ? s.half_length : -s.half_length);
    case Shape::Kind::Box: {
      const Vec3 p(d.x() >= 0.0 ? s.half_extents.x() : -s.half_extents.x(),
                   d.y() >= 0.0 ? s.half_extents.y() : -s.half_extents.y(),
                   d.z() >= 0.0 ? s.half_extents.z() : -s.half_extents.z());
      return pose * p;
    }
    case Shape::Kind::Hull: {
      size_t best = 0;
      double best_dot = d.dot(s.vertices[0]);
      for (size_t i = 1; i < s.vertices.size(); ++i) {
        const double dot = d.dot(s.vertices[i]);
        if (dot > best_dot) {
          best_dot = dot;
          best = i;
        }
      }
      return pose * s.vertices[best];
    }
  }
  return pose.translation;
}

struct CorePair {
  const Shape* shape_a;
  const Pose* pose_a;
  double margin_a;
  const Shape* shape_b;
  const Pose* pose_b;
  double margin_b;
  double scale;  // length scale for tolerances
};

CorePair make_core_pair(const Shape& a, const Pose& pa, const Shape& b, const Pose& pb) {
  CorePair cp{&a, &pa, core_margin(a), &b, &pb, core_margin(b), 1.0};
  cp.scale = std::max(1.0, a.bounding_radius() + b.bounding_radius() +
                               (pa.translation - pb.translation).norm());
  return cp;
}

struct SupportVertex {
  Vec3 w;  // a - b, Minkowski difference point
  Vec3 a;
  Vec3 b;
};

SupportVertex minkowski_support(const CorePair& cp, const Vec3& dir) {
  SupportVertex s;
  s.a = core_support(*cp.shape_a, *cp.pose_a, dir);
  s.b = core_support(*cp.shape_b, *cp.pose_b, -dir);
  s.w = s.a - s.b;
  return s;
}

struct Simplex {
  std::array<SupportVertex, 4> v;
  std::array<double, 4> lambda{1, 0, 0, 0};
  int size = 0;
};

void set_simplex1(Simplex& s, const SupportVertex& a) {
  s.v[0] = a;
  s.lambda = {1, 0, 0, 0};
  s.size = 1;
}

void set_simplex2(Simplex& s, const SupportVertex& a, const SupportVertex& b, double la, double lb) {
  s.v[0] = a;
  s.v[1] = b;
  s.lambda = {la, lb, 0, 0};
  s.size = 2;
}

void set_simplex3(Simplex& s, const SupportVertex& a, const SupportVertex& b,
                  const SupportVertex& c, double la, double lb, double lc) {
  s.v[0] = a;
  s.v[1] = b;
  s.v[2] = c;
  s.lambda = {la, lb, lc, 0};
  s.size = 3;
}

Vec3 closest_on_segment(const SupportVertex& a, const SupportVertex& b, Simplex& out) {
  const Vec3 ab = b.w - a.w;
  const double den = ab.squaredNorm();
  double t = den > kTiny ? -a.w.dot(ab) / den : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  if (t <= 0.0) {
    set_simplex1(out, a);
    return a.w;
  }
  if (t >= 1.0) {
    set_simplex1(out, b);
    return b.w;
  }
  set_simplex2(out, a, b, 1.0 - t, t);
  return a.w + t * ab;
}

// Ericson-style closest point of a triangle to the origin, with barycentric
// bookkeeping so witness points can be reconstructed on both bodies.
Vec3 closest_on_triangle(const SupportVertex& a, const SupportVertex& b,
                         const SupportVertex& c, Simplex& out) {
  const Vec3 ab = b.w - a.w;
  const Vec3 ac = c.w - a.w;
  const Vec3 ap = -a.w;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) {
    set_simplex1(out, a);
    return a.w;
  }

  const Vec3 bp = -b.w;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) {
    set_simplex1(out, b);
    return b.w;
  }

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double t = d1 / (d1 - d3);
    set_simplex2(out, a, b, 1.0 - t, t);
    return a.w + t * ab;
  }

  const Vec3 cp = -c.w;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) {
    set_simplex1(out, c);
    return c.w;
  }

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double t = d2 / (d2 - d6);
    set_simplex2(out, a, c, 1.0 - t, t);
    return a.w + t * ac;
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    set_simplex2(out, b, c, 1.0 - t, t);
    return b.w + t * (c.w - b.w);
  }

  const double sum = va + vb + vc;
  if (std::abs(sum) < kTiny) {
    // Degenerate (collinear) triangle: best edge wins.
    Simplex s_ab, s_ac, s_bc;
    const Vec3 p_ab = closest_on_segment(a, b, s_ab);
    const Vec3 p_ac = closest_on_segment(a, c, s_ac);
    const Vec3 p_bc = closest_on_segment(b, c, s_bc);
    const double n_ab = p_ab.squaredNorm(), n_ac = p_ac.squaredNorm(), n_bc = p_bc.squaredNorm();
    if (n_ab <= n_ac && n_ab <= n_bc) {
      out = s_ab;
      return p_ab;
    }
    if (n_ac <= n_bc) {
      out = s_ac;
      return p_ac;
    }
    out = s_bc;
    return p_bc;
  }

  const double denom = 1.0 / sum;
  const double v = vb * denom;
  const double w = vc * denom;
  set_simplex3(out, a, b, c, 1.0 - v - w, v, w);
  return a.w + ab * v + ac * w;
}

bool origin_outside_plane(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  const Vec3 n = (b - a).cross(c - a);
  const double sign_p = (-a).dot(n);
  const double sign_d = (d - a).dot(n);
  if (std::abs(sign_d) < kTiny) return true;  // flat tetra: force the face check
  return sign_p * sign_d < 0.0;
}

// Returns true when the origin is inside the tetrahedron.
bool closest_on_tetrahedron(const Simplex& in, Simplex& out, Vec3& closest) {
  static constexpr int faces[4][4] = {{0, 1, 2, 3}, {0, 2, 3, 1}, {0, 3, 1, 2}, {1, 3, 2, 0}};
  bool inside = true;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& f : faces) {
    if (!origin_outside_plane(in.v[f[0]].w, in.v[f[1]].w, in.v[f[2]].w, in.v[f[3]].w)) continue;
    inside = false;
    Simplex tmp;
    const Vec3 p = closest_on_triangle(in.v[f[0]], in.v[f[1]], in.v[f[2]], tmp);
    const double d2 = p.squaredNorm();
    if (d2 < best) {
      best = d2;
      out = tmp;
      closest = p;
    }
  }
  return inside;
}

struct GjkCoreResult {
  bool intersecting = false;
  double distance = 0.0;
  Vec3 point_a = Vec3::Zero();  // witness on core A
  Vec3 point_b = Vec3::Zero();
  Simplex simplex;
  int iterations = 0;
};

void core_witnesses(const Simplex& s, Vec3& pa, Vec3& pb) {
  pa.setZero();
  pb.setZero();
  for (int i = 0; i < s.size; ++i) {
    pa += s.lambda[i] * s.v[i].a;
    pb += s.lambda[i] * s.v[i].b;
  }
}

GjkCoreResult gjk_core(const CorePair& cp, int max_iterations) {
  GjkCoreResult res;
  Vec3 d0 = cp.pose_a->translation - cp.pose_b->translation;
  if (d0.squaredNorm() < kTiny) d0 = Vec3::UnitX();

  Simplex s;
  set_simplex1(s, minkowski_support(cp, d0));
  Vec3 v = s.v[0].w;

  const double contain_tol2 = std::pow(1e-11 * cp.scale, 2);
  const double dup_tol2 = std::pow(1e-12 * cp.scale, 2);
  double best_v2 = std::numeric_limits<double>::infinity();
  Simplex best_simplex = s;

  auto finish = [&]() {
    res.distance = std::sqrt(best_v2);
    res.simplex = best_simplex;
    core_witnesses(best_simplex, res.point_a, res.point_b);
    return res;
  };

  for (int iter = 0; iter < max_iterations; ++iter) {
    res.iterations = iter + 1;
    const double v2 = v.squaredNorm();
    if (v2 < contain_tol2) {
      res.intersecting = true;
      res.simplex = s;
      return res;
    }
    // |v| must shrink every round; floating-point stalls mean convergence.
    const bool stalled = v2 >= best_v2 * (1.0 - 1e-12);
    if (v2 < best_v2) {
      best_v2 = v2;
      best_simplex = s;
    }

    const SupportVertex w = minkowski_support(cp, -v);

    bool duplicate = false;
    for (int i = 0; i < s.size; ++i) {
      if ((w.w - s.v[i].w).squaredNorm() < dup_tol2) {
        duplicate = true;
        break;
      }
    }
    // No further progress possible: v is the closest point.
    if (duplicate || stalled || v2 - v.dot(w.w) <= 1e-12 * v2) return finish();

    Simplex grown = s;
    grown.v[grown.size] = w;
    grown.size += 1;

    switch (grown.size) {
      case 2:
        v = closest_on_segment(grown.v[0], grown.v[1], s);
        break;
      case 3:
        v = closest_on_triangle(grown.v[0], grown.v[1], grown.v[2], s);
        break;
      case 4: {
        if (closest_on_tetrahedron(grown, s, v)) {
          res.intersecting = true;
          res.simplex = grown;
          return res;
        }
        break;
      }
      default:
        break;
    }
  }

  // Out of budget. Report the best estimate conservatively.
  DistanceResult best;
  core_witnesses(best_simplex, best.point_a, best.point_b);
  const Vec3 diff = best.point_a - best.point_b;
  best.signed_distance = std::sqrt(best_v2) - cp.margin_a - cp.margin_b;
  best.normal = diff.norm() > kTiny ? Vec3(diff.normalized()) : Vec3::UnitZ();
  throw ProximityError("GJK did not converge", best);
}

// ---------------------------------------------------------------------------
// EPA on the core polytopes.
// ---------------------------------------------------------------------------

struct EpaFace {
  int a, b, c;
  Vec3 normal;      // unit, outward
  double plane_dist;  // plane offset from the origin along normal
  Vec3 closest;       // closest point of the triangle to the origin
  double closest_dist;
  std::array<double, 3> bary;  // barycentrics of `closest` over (a, b, c)
  bool alive = true;
};

struct EpaCoreResult {
  double depth = 0.0;   // core penetration (>= 0)
  Vec3 outward;         // direction from origin to nearest boundary point
  Vec3 point_a;
  Vec3 point_b;
};

// Closest point of triangle ABC to the origin with full barycentrics.
Vec3 triangle_closest(const Vec3& a, const Vec3& b, const Vec3& c, std::array<double, 3>& lam) {
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const double d1 = ab.dot(-a), d2 = ac.dot(-a);
  if (d1 <= 0.0 && d2 <= 0.0) {
    lam = {1, 0, 0};
    return a;
  }
  const double d3 = ab.dot(-b), d4 = ac.dot(-b);
  if (d3 >= 0.0 && d4 <= d3) {
    lam = {0, 1, 0};
    return b;
  }
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double t = d1 - d3 > kTiny ? d1 / (d1 - d3) : 0.0;
    lam = {1 - t, t, 0};
    return a + t * ab;
  }
  const double d5 = ab.dot(-c), d6 = ac.dot(-c);
  if (d6 >= 0.0 && d5 <= d6) {
    lam = {0, 0, 1};
    return c;
  }
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double t = d2 - d6 > kTiny ? d2 / (d2 - d6) : 0.0;
    lam = {1 - t, 0, t};
    return a + t * ac;
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double denom = (d4 - d3) + (d5 - d6);
    const double t = denom > kTiny ? (d4 - d3) / denom : 0.0;
    lam = {0, 1 - t, t};
    return b + t * (c - b);
  }
  const double sum = va + vb + vc;
  if (std::abs(sum) < kTiny) {
    // Degenerate triangle: best of the edges.
    std::array<double, 3> best_lam{1, 0, 0};
    Vec3 best = a;
    double best_d = a.squaredNorm();
    auto consider = [&](const Vec3& p, const std::array<double, 3>& l) {
      if (p.squaredNorm() < best_d) {
        best_d = p.squaredNorm();
        best = p;
        best_lam = l;
      }
    };
    {
      const double den = ab.squaredNorm();
      const double t = den > kTiny ? std::clamp(-a.dot(ab) / den, 0.0, 1.0) : 0.0;
      consider(a + t * ab, {1 - t, t, 0});
    }
    {
      const double den = ac.squaredNorm();
      const double t = den > kTiny ? std::clamp(-a.dot(ac) / den, 0.0, 1.0) : 0.0;
      consider(a + t * ac, {1 - t, 0, t});
    }
    {
      const Vec3 bc = c - b;
      const double den = bc.squaredNorm();
      const double t = den > kTiny ? std::clamp(-b.dot(bc) / den, 0.0, 1.0) : 0.0;
      consider(b + t * bc, {0, 1 - t, t});
    }
    lam = best_lam;
    return best;
  }
  const double denom = 1.0 / sum;
  const double v = vb * denom;
  const double w = vc * denom;
  lam = {1 - v - w, v, w};
  return a + ab * v + ac * w;
}

bool make_face(const std::vector<SupportVertex>& verts, int a, int b, int c,
               const Vec3& interior, EpaFace& out) {
  out.a = a;
  out.b = b;
  out.c = c;
  const Vec3 ab = verts[b].w - verts[a].w;
  const Vec3 ac = verts[c].w - verts[a].w;
  Vec3 n = ab.cross(ac);
  const double len = n.norm();
  if (len < kTiny) return false;
  n /= len;
  if (n.dot(verts[a].w - interior) < 0.0) {
    n = -n;
    std::swap(out.b, out.c);  // keep winding consistent with the normal
  }
  out.normal = n;
  out.plane_dist = n.dot(verts[a].w);
  out.closest = triangle_closest(verts[out.a].w, verts[out.b].w, verts[out.c].w, out.bary);
  out.closest_dist = out.closest.norm();
  out.alive = true;
  return true;
}

const std::array<Vec3, 14>& probe_directions() {
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
  return dirs;
}

[[noreturn]] void throw_epa_degenerate(const CorePair& cp, double best_guess) {
  // Conservative fallback: deeper than any possible true penetration.
  DistanceResult fallback;
  const double bound = cp.shape_a->bounding_radius() + cp.shape_b->bounding_radius();
  fallback.signed_distance = -std::max(best_guess, bound) - cp.margin_a - cp.margin_b;
  throw ProximityError("EPA degenerate polytope", fallback);
}

EpaCoreResult epa_core(const CorePair& cp, const Simplex& seed, int max_iterations) {
  std::vector<SupportVertex> verts;
  for (int i = 0; i < seed.size; ++i) verts.push_back(seed.v[i]);
  for (const Vec3& d : probe_directions()) verts.push_back(minkowski_support(cp, d));

  // Pick four affinely independent vertices for the initial tetrahedron.
  const double eps = 1e-10 * cp.scale;
  size_t i0 = 0, i1 = 0;
  double best = -1.0;
  for (size_t i = 1; i < verts.size(); ++i) {
    const double d = (verts[i].w - verts[i0].w).squaredNorm();
    if (d > best) {
      best = d;
      i1 = i;
    }
  }
  if (best < eps * eps) throw_epa_degenerate(cp, 0.0);
  const Vec3 axis = (verts[i1].w - verts[i0].w).normalized();
  size_t i2 = 0;
  best = -1.0;
  for (size_t i = 0; i < verts.size(); ++i) {
    const Vec3 r = verts[i].w - verts[i0].w;
    const double d = (r - r.dot(axis) * axis).squaredNorm();
    if (d > best) {
      best = d;
      i2 = i;
    }
  }
  if (best < eps * eps) throw_epa_degenerate(cp, 0.0);
  const Vec3 plane_n = (verts[i1].w - verts[i0].w).cross(verts[i2].w - verts[i0].w).normalized();
  size_t i3 = 0;
  best = -1.0;
  for (size_t i = 0; i < verts.size(); ++i) {
    const double d = std::abs(plane_n.dot(verts[i].w - verts[i0].w));
    if (d > best) {
      best = d;
      i3 = i;
    }
  }
  if (best < eps) throw_epa_degenerate(cp, 0.0);

  std::vector<SupportVertex> poly{verts[i0], verts[i1], verts[i2], verts[i3]};
  const Vec3 interior = 0.25 * (poly[0].w + poly[1].w + poly[2].w + poly[3].w);

  std::vector<EpaFace> faces;
  static constexpr int tetra_faces[4][3] = {{0, 1, 2}, {0, 2, 3}, {0, 3, 1}, {1, 3, 2}};
  for (const auto& f : tetra_faces) {
    EpaFace face;
    if (!make_face(poly, f[0], f[1], f[2], interior, face)) throw_epa_degenerate(cp, 0.0);
    faces.push_back(face);
  }

  const double grow_tol = 1e-10 * cp.scale;
  const double dup_tol2 = std::pow(1e-12 * cp.scale, 2);

  // Grows the polytope with a new support vertex; returns false when the
  // vertex adds nothing (duplicate or interior).
  auto expand = [&](const SupportVertex& w) -> bool {
    for (const SupportVertex& v : poly)
      if ((w.w - v.w).squaredNorm() < dup_tol2) return false;
    std::vector<std::pair<int, int>> horizon;
    bool any_visible = false;
    for (auto& f : faces) {
      if (!f.alive) continue;
      if (f.normal.dot(w.w - poly[f.a].w) > 1e-12 * cp.scale) {
        any_visible = true;
        f.alive = false;
        const std::array<std::pair<int, int>, 3> edges{{{f.a, f.b}, {f.b, f.c}, {f.c, f.a}}};
        for (const auto& e : edges) {
          auto twin = std::find_if(horizon.begin(), horizon.end(), [&](const auto& h) {
            return h.first == e.second && h.second == e.first;
          });
          if (twin != horizon.end())
            horizon.erase(twin);
          else
            horizon.push_back(e);
        }
      }
    }
    if (!any_visible) return false;
    if (horizon.empty()) throw_epa_degenerate(cp, 0.0);
    const int new_index = static_cast<int>(poly.size());
    poly.push_back(w);
    for (const auto& e : horizon) {
      EpaFace nf;
      if (!make_face(poly, e.first, e.second, new_index, interior, nf))
        throw_epa_degenerate(cp, 0.0);
      faces.push_back(nf);
    }
    return true;
  };

  // Phase 0: the initial tetrahedron is inscribed in the difference but may
  // not contain the origin; push faces outward until it does.
  for (int iter = 0; iter < max_iterations; ++iter) {
    int worst = -1;
    double worst_dist = -grow_tol;
    for (size_t i = 0; i < faces.size(); ++i) {
      if (faces[i].alive && faces[i].plane_dist < worst_dist) {
        worst_dist = faces[i].plane_dist;
        worst = static_cast<int>(i);
      }
    }
    if (worst < 0) break;  // origin enclosed
    if (!expand(minkowski_support(cp, faces[worst].normal))) break;
  }

  // Phase 1: refine the nearest boundary point.
  int best_face = -1;
  for (int iter = 0; iter < max_iterations; ++iter) {
    best_face = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < faces.size(); ++i) {
      if (faces[i].alive && faces[i].closest_dist < best_dist) {
        best_dist = faces[i].closest_dist;
        best_face = static_cast<int>(i);
      }
    }
    if (best_face < 0) throw_epa_degenerate(cp, 0.0);

    const EpaFace face = faces[best_face];
    const Vec3 dir =
        face.closest_dist > 1e-9 * cp.scale ? Vec3(face.closest / face.closest_dist) : face.normal;
    const SupportVertex w = minkowski_support(cp, dir);
    if (dir.dot(w.w) - face.closest_dist <= grow_tol) break;  // boundary reached
    if (!expand(w)) break;
  }

  if (best_face < 0) throw_epa_degenerate(cp, 0.0);
  const EpaFace& face = faces[best_face];

  EpaCoreResult res;
  res.depth = face.closest_dist;
  res.outward =
      face.closest_dist > 1e-9 * cp.scale ? Vec3(face.closest / face.closest_dist) : face.normal;
  res.point_a = face.bary[0] * poly[face.a].a + face.bary[1] * poly[face.b].a +
                face.bary[2] * poly[face.c].a;
  res.point_b = face.bary[0] * poly[face.a].b + face.bary[1] * poly[face.b].b +
                face.bary[2] * poly[face.c].b;
  return res;
}

// ---------------------------------------------------------------------------
// Closed forms for round pairs and the dispatching query.
// ---------------------------------------------------------------------------

DistanceResult sphere_pair_result(const Vec3& ca, double ra, const Vec3& cb, double rb) {
  const Vec3 diff = ca - cb;
  const double d = diff.norm();
  const Vec3 n = d > 1e-12 ? Vec3(diff / d) : Vec3::UnitZ();
  DistanceResult r;
  r.signed_distance = d - ra - rb;
  r.normal = n;
  r.point_a = ca - ra * n;
  r.point_b = cb + rb * n;
  return r;
}

void segment_endpoints(const Shape& s, const Pose& pose, Vec3& p0, Vec3& p1) {
  const Vec3 axis = pose.rotation.col(2);
  p0 = pose.translation - s.half_length * axis;
  p1 = pose.translation + s.half_length * axis;
}

// Closest points between segments [p1,q1] and [p2,q2].
void closest_segment_segment(const Vec3& p1, const Vec3& q1, const Vec3& p2, const Vec3& q2,
                             Vec3& c1, Vec3& c2) {
  const Vec3 d1 = q1 - p1;
  const Vec3 d2 = q2 - p2;
  const Vec3 r = p1 - p2;
  const double a = d1.squaredNorm();
  const double e = d2.squaredNorm();
  const double f = d2.dot(r);
  double s = 0.0, t = 0.0;
  if (a <= kTiny && e <= kTiny) {
    // both degenerate
  } else if (a <= kTiny) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= kTiny) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double denom = a * e - b * b;
      s = denom > kTiny ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  c1 = p1 + d1 * s;
  c2 = p2 + d2 * t;
}

bool is_round(const Shape& s) {
  return s.kind == Shape::Kind::Sphere || s.kind == Shape::Kind::Capsule;
}

DistanceResult round_pair_query(const Shape& a, const Pose& pa, const Shape& b, const Pose& pb) {
  Vec3 ca = pa.translation, cb = pb.translation;
  if (a.kind == Shape::Kind::Capsule && b.kind == Shape::Kind::Capsule) {
    Vec3 a0, a1, b0, b1;
    segment_endpoints(a, pa, a0, a1);
    segment_endpoints(b, pb, b0, b1);
    closest_segment_segment(a0, a1, b0, b1, ca, cb);
  } else if (a.kind == Shape::Kind::Capsule) {
    Vec3 a0, a1;
    segment_endpoints(a, pa, a0, a1);
    Vec3 dummy;
    closest_segment_segment(a0, a1, cb, cb, ca, dummy);
  } else if (b.kind == Shape::Kind::Capsule) {
    Vec3 b0, b1;
    segment_endpoints(b, pb, b0, b1);
    Vec3 dummy;
    closest_segment_segment(b0, b1, ca, ca, cb, dummy);
  }
  return sphere_pair_result(ca, a.radius, cb, b.radius);
}

DistanceResult query(const Shape& a, const Pose& pa, const Shape& b, const Pose& pb,
                     int max_iterations) {
  if (is_round(a) && is_round(b)) return round_pair_query(a, pa, b, pb);

  const CorePair cp = make_core_pair(a, pa, b, pb);
  GjkCoreResult gjk = gjk_core(cp, max_iterations);

  // For barely-separated cores the witness direction is unreliable; the EPA
  // contact normal is the right answer there.
  if (!gjk.intersecting && gjk.distance > 1e-9 * cp.scale) {
    const Vec3 diff = gjk.point_a - gjk.point_b;
    const Vec3 n = diff / gjk.distance;
    DistanceResult r;
    r.signed_distance = gjk.distance - cp.margin_a - cp.margin_b;
    r.normal = n;
    r.point_a = gjk.point_a - cp.margin_a * n;
    r.point_b = gjk.point_b + cp.margin_b * n;
    return r;
  }

  const EpaCoreResult epa = epa_core(cp, gjk.simplex, max_iterations);
  DistanceResult r;
  const Vec3 n = -epa.outward;  // translating A along -outward separates the pair
  r.signed_distance = -(epa.depth + cp.margin_a + cp.margin_b);
  r.normal = n;
  r.point_a = epa.point_a - cp.margin_a * n;
  r.point_b = epa.point_b + cp.margin_b * n;
  return r;
}

}  // namespace

GjkOutcome gjk_distance(const Shape& shape_a, const Pose& pose_a, const Shape& shape_b,
                        const Pose& pose_b, int max_iterations) {
  const DistanceResult r = query(shape_a, pose_a, shape_b, pose_b, max_iterations);
  if (r.signed_distance >= 0.0) return {false, r};
  return {true, {}};
}

DistanceResult epa_penetration(const Shape& shape_a, const Pose& pose_a, const Shape& shape_b,
                               const Pose& pose_b, int max_iterations) {
  const DistanceResult r = query(shape_a, pose_a, shape_b, pose_b, max_iterations);
  if (r.signed_distance > 0.0)
    throw std::invalid_argument("epa_penetration called on separated bodies");
  return r;
}

DistanceResult signed_distance(const Shape& shape_a, const Pose& pose_a, const Shape& shape_b,
                               const Pose& pose_b) {
  return query(shape_a, pose_a, shape_b, pose_b, 128);
}

Vec3 support_point(const Shape& shape, const Pose& pose, const Vec3& dir) {
  const Vec3 d = dir.norm() > kTiny ? Vec3(dir.normalized()) : Vec3::UnitZ();
  return core_support(shape, pose, d) + core_margin(shape) * d;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

namespace {

Vec3 vec3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

nlohmann::json vec3_to_json(const Vec3& v) {
  return nlohmann::json::array({v.x(), v.y(), v.z()});
}

}  // namespace

void to_json(nlohmann::json& j, const Shape& s) {
  switch (s.kind) {
    case Shape::Kind::Sphere:
      j = {{"type", "sphere"}, {"radius", s.radius}};
      break;
    case Shape::Kind::Capsule:
      j = {{"type", "capsule"}, {"half_length", s.half_length}, {"radius", s.radius}};
      break;
    case Shape::Kind::Box:
      j = {{"type", "box"}, {"half_extents", vec3_to_json(s.half_extents)}};
      break;
    case Shape::Kind::Hull: {
      nlohmann::json verts = nlohmann::json::array();
      for (const Vec3& v : s.vertices) verts.push_back(vec3_to_json(v));
      j = {{"type", "hull"}, {"vertices", verts}};
      break;
    }
  }
}

void from_json(const nlohmann::json& j, Shape& s) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "sphere") {
    s = Shape::sphere(j.at("radius").get<double>());
  } else if (type == "capsule") {
    s = Shape::capsule(j.at("half_length").get<double>(), j.at("radius").get<double>());
  } else if (type == "box") {
    s = Shape::box(vec3_from_json(j.at("half_extents")));
  } else if (type == "hull") {
    std::vector<Vec3> verts;
    for (const auto& v : j.at("vertices")) verts.push_back(vec3_from_json(v));
    s = Shape::hull(std::move(verts));
  } else {
    throw std::invalid_argument("unknown shape type: " + type);
  }
}

void to_json(nlohmann::json& j, const Pose& p) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    rows.push_back(nlohmann::json::array({p.rotation(r, 0), p.rotation(r, 1), p.rotation(r, 2)}));
  j = {{"xyz", vec3_to_json(p.translation)}, {"R", rows}};
}

void from_json(const nlohmann::json& j, Pose& p) {
  p = Pose::identity();
  if (j.contains("xyz")) p.translation = vec3_from_json(j.at("xyz"));
  if (j.contains("R")) {
    const auto& rows = j.at("R");
    if (!rows.is_array() || rows.size() != 3) throw std::invalid_argument("pose R must be 3x3");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) p.rotation(r, c) = rows[r][c].get<double>();
  } else if (j.contains("rpy")) {
    p.rotation = Pose::from_rpy(Vec3::Zero(), vec3_from_json(j.at("rpy"))).rotation;
  }
  if (!p.is_rigid(1e-6)) throw std::invalid_argument("pose rotation is not rigid");
}

}  // namespace sfilter
