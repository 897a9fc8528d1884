#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "han/core/error.hpp"

namespace han::geo {

enum class Frame { kCamera, kRobot };

inline const char* frame_name(Frame f) { return f == Frame::kCamera ? "camera" : "robot"; }

/// Metric point tagged with the frame it is expressed in.
struct Point3 {
  double x = 0, y = 0, z = 0;
  Frame frame = Frame::kRobot;

  Eigen::Vector3d vec() const { return {x, y, z}; }
  static Point3 from(const Eigen::Vector3d& v, Frame f) { return {v.x(), v.y(), v.z(), f}; }
};

/// Continuous pixel position, u = row and v = col, integer values at pixel centers.
struct Pixel {
  double u = 0, v = 0;
  std::optional<double> depth;
};

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
  Eigen::Vector3d apply_inverse(const Eigen::Vector3d& p) const { return rotation.transpose() * (p - translation); }
};

/// Pinhole intrinsics plus the camera-to-robot extrinsic. Camera axes:
/// +Z forward, +X right (increasing col), +Y down (increasing row).
struct CameraModel {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int height = 1, width = 1;
  RigidTransform extrinsic;

  void validate() const {
    if (!(fx > 0) || !(fy > 0)) throw ConfigError("camera focal lengths must be positive");
    if (height < 1 || width < 1) throw ConfigError("camera image dims must be positive");
    if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height))
      throw ConfigError("camera principal point outside the image");
    const Eigen::Matrix3d& r = extrinsic.rotation;
    if (!(r.transpose() * r).isApprox(Eigen::Matrix3d::Identity(), 1e-9) || std::abs(r.determinant() - 1.0) > 1e-9)
      throw ConfigError("camera extrinsic rotation is not a proper rotation");
  }

  bool operator==(const CameraModel& o) const {
    return fx == o.fx && fy == o.fy && cx == o.cx && cy == o.cy && height == o.height && width == o.width &&
           extrinsic.rotation == o.extrinsic.rotation && extrinsic.translation == o.extrinsic.translation;
  }
};

inline Point3 unproject(const CameraModel& cam, const Pixel& px) {
  if (!px.depth) throw InvalidDepthError("unproject requires a depth value");
  const double d = *px.depth;
  if (!(d > 0)) throw InvalidDepthError("depth must be positive, got " + std::to_string(d));
  return {(px.v - cam.cx) * d / cam.fx, (px.u - cam.cy) * d / cam.fy, d, Frame::kCamera};
}

inline Point3 cam_to_robot(const CameraModel& cam, const Point3& p) {
  if (p.frame != Frame::kCamera)
    throw UsageError(std::string("cam_to_robot expects a camera-frame point, got ") + frame_name(p.frame));
  return Point3::from(cam.extrinsic.apply(p.vec()), Frame::kRobot);
}

inline Point3 robot_to_cam(const CameraModel& cam, const Point3& p) {
  if (p.frame != Frame::kRobot)
    throw UsageError(std::string("robot_to_cam expects a robot-frame point, got ") + frame_name(p.frame));
  return Point3::from(cam.extrinsic.apply_inverse(p.vec()), Frame::kCamera);
}

/// Inverse of cam_to_robot(unproject(.)); returns continuous pixel and depth.
inline Pixel project(const CameraModel& cam, const Point3& p) {
  const Point3 c = robot_to_cam(cam, p);
  if (!(c.z > 0)) throw BehindCameraError("point is behind the camera (Z=" + std::to_string(c.z) + ")");
  return {cam.cy + cam.fy * c.y / c.z, cam.cx + cam.fx * c.x / c.z, c.z};
}

/// Crop-relative keypoint to image coordinates.
inline std::array<double, 2> region_to_global(std::array<int, 2> crop_origin, std::array<double, 2> local) {
  return {crop_origin[0] + local[0], crop_origin[1] + local[1]};
}

/// Camera at `eye` looking at `target`, image rows pointing toward world -Z
/// as much as the view direction allows.
inline RigidTransform look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                              const Eigen::Vector3d& world_up = Eigen::Vector3d::UnitZ()) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  const Eigen::Vector3d right = forward.cross(world_up).normalized();
  const Eigen::Vector3d down = forward.cross(right);
  RigidTransform t;
  t.rotation.col(0) = right;
  t.rotation.col(1) = down;
  t.rotation.col(2) = forward;
  t.translation = eye;
  return t;
}

}  // namespace han::geo
