#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "han/geometry/camera.hpp"
#include "han/image/image.hpp"
#include "han/sim/task.hpp"

namespace han::sim {

/// Box rotated by `yaw` about +z around its own center.
struct OrientedBox {
  Eigen::Vector3d center;
  Eigen::Vector3d half;
  double yaw = 0.0;
  img::Rgb color{0, 0, 0};
};

/// Vertical solid of revolution between z_min and z_max, annular when r_in > 0.
struct Annulus {
  Eigen::Vector3d axis_base;  // bottom center
  double r_out = 0, r_in = 0, z_min = 0, z_max = 0;
  img::Rgb color{0, 0, 0};
};

struct GripperGeometry {
  static constexpr double kFingerOpenY = 0.03;
  static constexpr double kFingerClosedY = 0.02;
};

inline std::vector<OrientedBox> gripper_boxes(const GripperState& g) {
  const double fy = g.fingers == Fingers::kOpen ? GripperGeometry::kFingerOpenY : GripperGeometry::kFingerClosedY;
  const Eigen::Vector3d& p = g.x_ee;
  return {
      {p + Eigen::Vector3d(0, fy + 0.005, 0.01), {0.008, 0.005, 0.02}, 0.0, palette::kGripperFinger},
      {p + Eigen::Vector3d(0, -fy - 0.005, 0.01), {0.008, 0.005, 0.02}, 0.0, palette::kGripperFinger},
      {p + Eigen::Vector3d(0, 0, 0.04), {0.012, 0.045, 0.01}, 0.0, palette::kGripperBody},
      {p + Eigen::Vector3d(0, 0, 0.08), {0.008, 0.008, 0.03}, 0.0, palette::kGripperBody},
  };
}

inline std::vector<OrientedBox> tool_boxes(const Object& tool) {
  using G = ToolGeometry;
  const Eigen::Vector3d handle_c = tool.to_world({0.0, 0.0, G::kHandleHalf[2]});
  const Eigen::Vector3d hook_c = tool.to_world({G::kHookCenter[0], G::kHookCenter[1], G::kHookHalf[2]});
  return {
      {handle_c, {G::kHandleHalf[0], G::kHandleHalf[1], G::kHandleHalf[2]}, tool.yaw, tool.color},
      {hook_c, {G::kHookHalf[0], G::kHookHalf[1], G::kHookHalf[2]}, tool.yaw, tool.color},
  };
}

struct SceneGeometry {
  std::vector<OrientedBox> boxes;
  std::vector<Annulus> annuli;
  double table_z = 0.0;
  double table_half = 0.4;
};

inline SceneGeometry scene_geometry(const Scene& scene, const SimConfig& cfg, bool include_gripper = true) {
  SceneGeometry geo;
  geo.table_z = scene.table_z;
  geo.table_half = cfg.table_half;
  for (const auto& o : scene.objects) {
    switch (o.shape) {
      case ShapeKind::kBox:
        geo.boxes.push_back({o.center(), o.half_extents, o.yaw, o.color});
        break;
      case ShapeKind::kCylinder:
        geo.annuli.push_back({o.position, o.half_extents.x(), 0.0, o.position.z(), o.top(), o.color});
        break;
      case ShapeKind::kRing:
        geo.annuli.push_back({o.position, o.half_extents.x(), o.half_extents.y(), o.position.z(), o.top(), o.color});
        break;
      case ShapeKind::kTool:
        for (const auto& b : tool_boxes(o)) geo.boxes.push_back(b);
        break;
    }
  }
  if (include_gripper)
    for (const auto& b : gripper_boxes(scene.gripper)) geo.boxes.push_back(b);
  return geo;
}

struct RayHit {
  double t = std::numeric_limits<double>::infinity();
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  img::Rgb color{0, 0, 0};
};

namespace detail {

constexpr double kRayEps = 1e-9;

inline void intersect_box(const OrientedBox& b, const Eigen::Vector3d& o, const Eigen::Vector3d& d, RayHit& hit) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const Eigen::Vector3d rel = o - b.center;
  // World to box-local rotation (inverse yaw).
  const Eigen::Vector3d lo(c * rel.x() + s * rel.y(), -s * rel.x() + c * rel.y(), rel.z());
  const Eigen::Vector3d ld(c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z());
  double t_near = -std::numeric_limits<double>::infinity(), t_far = std::numeric_limits<double>::infinity();
  int axis = -1;
  double sign = 1.0;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(ld[i]) < 1e-15) {
      if (std::abs(lo[i]) > b.half[i]) return;
      continue;
    }
    double t0 = (-b.half[i] - lo[i]) / ld[i];
    double t1 = (b.half[i] - lo[i]) / ld[i];
    double face = -1.0;
    if (t0 > t1) {
      std::swap(t0, t1);
      face = 1.0;
    }
    if (t0 > t_near) {
      t_near = t0;
      axis = i;
      sign = face;
    }
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return;
  }
  if (axis < 0 || t_near <= kRayEps || t_near >= hit.t) return;
  Eigen::Vector3d ln = Eigen::Vector3d::Zero();
  ln[axis] = sign;
  hit.t = t_near;
  hit.normal = {c * ln.x() - s * ln.y(), s * ln.x() + c * ln.y(), ln.z()};
  hit.color = b.color;
}

inline void intersect_annulus(const Annulus& a, const Eigen::Vector3d& o, const Eigen::Vector3d& d, RayHit& hit) {
  const double ox = o.x() - a.axis_base.x(), oy = o.y() - a.axis_base.y();
  auto consider = [&](double t, const Eigen::Vector3d& n) {
    if (t > kRayEps && t < hit.t) {
      hit.t = t;
      hit.normal = n;
      hit.color = a.color;
    }
  };
  if (std::abs(d.z()) > 1e-15) {
    for (double zc : {a.z_max, a.z_min}) {
      const double t = (zc - o.z()) / d.z();
      const double r = std::hypot(ox + t * d.x(), oy + t * d.y());
      if (r <= a.r_out && r >= a.r_in) consider(t, Eigen::Vector3d(0, 0, zc == a.z_max ? 1.0 : -1.0));
    }
  }
  const double qa = d.x() * d.x() + d.y() * d.y();
  if (qa < 1e-18) return;
  auto side = [&](double r, bool outer) {
    const double qb = 2 * (ox * d.x() + oy * d.y());
    const double qc = ox * ox + oy * oy - r * r;
    const double disc = qb * qb - 4 * qa * qc;
    if (disc < 0) return;
    const double sq = std::sqrt(disc);
    // Outer wall is seen on entry, inner wall from inside the hole on exit.
    const double t = outer ? (-qb - sq) / (2 * qa) : (-qb + sq) / (2 * qa);
    const double z = o.z() + t * d.z();
    if (z < a.z_min || z > a.z_max) return;
    Eigen::Vector3d n(ox + t * d.x(), oy + t * d.y(), 0.0);
    n /= r;
    consider(t, outer ? n : Eigen::Vector3d(-n));
  };
  side(a.r_out, true);
  if (a.r_in > 0) side(a.r_in, false);
}

}  // namespace detail

inline RayHit cast_ray(const SceneGeometry& geo, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  RayHit hit;
  if (std::abs(dir.z()) > 1e-15) {
    const double t = (geo.table_z - origin.z()) / dir.z();
    const Eigen::Vector3d p = origin + t * dir;
    if (t > detail::kRayEps && std::abs(p.x()) <= geo.table_half && std::abs(p.y()) <= geo.table_half) {
      hit.t = t;
      hit.normal = Eigen::Vector3d::UnitZ();
      hit.color = palette::kTable;
    }
  }
  for (const auto& b : geo.boxes) detail::intersect_box(b, origin, dir, hit);
  for (const auto& a : geo.annuli) detail::intersect_annulus(a, origin, dir, hit);
  return hit;
}

struct Observation {
  img::RgbImage rgb;
  img::DepthImage depth;  // camera-frame Z in meters, far_depth where nothing is hit
};

inline img::Rgb shade(img::Rgb color, Eigen::Vector3d normal, const Eigen::Vector3d& dir) {
  static const Eigen::Vector3d light = Eigen::Vector3d(0.4, 0.3, 1.0).normalized();
  if (normal.dot(dir) > 0) normal = -normal;
  const double k = 0.55 + 0.45 * std::max(0.0, normal.dot(light));
  img::Rgb out;
  for (int i = 0; i < 3; ++i) out[i] = static_cast<std::uint8_t>(std::clamp(std::lround(color[i] * k), 0L, 255L));
  return out;
}

/// Ray-casts the scene through every pixel center. The ray direction has unit
/// camera Z, so the hit parameter is the depth directly.
inline Observation render(const Scene& scene, const geo::CameraModel& cam, const SimConfig& cfg = {}) {
  const SceneGeometry geo = scene_geometry(scene, cfg);
  Observation obs{img::RgbImage(cam.height, cam.width, palette::kBackground),
                  img::DepthImage(cam.height, cam.width, static_cast<float>(cfg.far_depth))};
  const Eigen::Matrix3d& R = cam.extrinsic.rotation;
  const Eigen::Vector3d& eye = cam.extrinsic.translation;
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      const Eigen::Vector3d dir = R * Eigen::Vector3d((c - cam.cx) / cam.fx, (r - cam.cy) / cam.fy, 1.0);
      const RayHit hit = cast_ray(geo, eye, dir);
      if (!std::isfinite(hit.t)) continue;
      obs.depth.at(r, c) = static_cast<float>(hit.t);
      obs.rgb.set(r, c, shade(hit.color, hit.normal, dir));
    }
  }
  return obs;
}

}  // namespace han::sim
