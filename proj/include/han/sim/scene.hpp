#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "han/core/error.hpp"
#include "han/image/image.hpp"

namespace han::sim {

enum class TaskId { kLifting, kStacking, kToolUsing };
enum class Region { kInterpolation, kExtrapolation };
enum class ShapeKind { kBox, kCylinder, kRing, kTool };
enum class Fingers { kOpen, kClosed };
enum class Grip { kOpen, kClose };

inline const char* to_string(TaskId t) {
  switch (t) {
    case TaskId::kLifting: return "lifting";
    case TaskId::kStacking: return "stacking";
    case TaskId::kToolUsing: return "tool_using";
  }
  return "?";
}

inline const char* to_string(Region r) { return r == Region::kInterpolation ? "interpolation" : "extrapolation"; }

inline const char* to_string(ShapeKind s) {
  switch (s) {
    case ShapeKind::kBox: return "box";
    case ShapeKind::kCylinder: return "cylinder";
    case ShapeKind::kRing: return "ring";
    case ShapeKind::kTool: return "tool";
  }
  return "?";
}

inline const char* to_string(Fingers f) { return f == Fingers::kOpen ? "open" : "closed"; }

inline std::string valid_task_names() { return "lifting, stacking, tool_using"; }

inline TaskId parse_task(const std::string& s) {
  if (s == "lifting") return TaskId::kLifting;
  if (s == "stacking") return TaskId::kStacking;
  if (s == "tool_using") return TaskId::kToolUsing;
  throw ConfigError("unknown task '" + s + "'; valid tasks: " + valid_task_names());
}

inline Region parse_region(const std::string& s) {
  if (s == "interpolation" || s == "int") return Region::kInterpolation;
  if (s == "extrapolation" || s == "ext") return Region::kExtrapolation;
  throw ConfigError("unknown region '" + s + "'; valid regions: interpolation, extrapolation");
}

inline ShapeKind parse_shape(const std::string& s) {
  if (s == "box") return ShapeKind::kBox;
  if (s == "cylinder") return ShapeKind::kCylinder;
  if (s == "ring") return ShapeKind::kRing;
  if (s == "tool") return ShapeKind::kTool;
  throw FormatError("unknown shape '" + s + "'");
}

/// Fixed L-shaped tool geometry in its local frame (origin at the handle's
/// base center, +x toward the hook).
struct ToolGeometry {
  static constexpr double kHandleHalf[3] = {0.12, 0.01, 0.01};
  static constexpr double kHookCenter[3] = {0.13, 0.035, 0.0};
  static constexpr double kHookHalf[3] = {0.01, 0.045, 0.01};
  static Eigen::Vector3d grasp_local() { return {-0.10, 0.0, 0.01}; }
  static Eigen::Vector3d hook_local() { return {0.10, 0.04, 0.0}; }
};

/// A rigid object. `position` is the center of its bottom face.
/// half_extents: box (hx, hy, hz); cylinder (radius, radius, hz);
/// ring (outer radius, inner radius, hz); tool (unused, see ToolGeometry).
struct Object {
  int id = 0;
  std::string name;
  ShapeKind shape = ShapeKind::kBox;
  Eigen::Vector3d half_extents = Eigen::Vector3d::Zero();
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double yaw = 0.0;
  img::Rgb color{0, 0, 0};
  bool graspable = false;

  double height() const {
    return shape == ShapeKind::kTool ? 2 * ToolGeometry::kHandleHalf[2] : 2 * half_extents.z();
  }
  double top() const { return position.z() + height(); }

  Eigen::Vector3d to_world(const Eigen::Vector3d& local) const {
    const double c = std::cos(yaw), s = std::sin(yaw);
    return position + Eigen::Vector3d(c * local.x() - s * local.y(), s * local.x() + c * local.y(), local.z());
  }

  Eigen::Vector3d grasp_point() const {
    if (shape == ShapeKind::kTool) return to_world(ToolGeometry::grasp_local());
    return position + Eigen::Vector3d(0, 0, half_extents.z());
  }

  Eigen::Vector3d center() const {
    if (shape == ShapeKind::kTool) return to_world({0.0, 0.0, ToolGeometry::kHandleHalf[2]});
    return position + Eigen::Vector3d(0, 0, half_extents.z());
  }

  /// Whether (x, y) lies on this object's top surface footprint.
  bool supports(double x, double y) const {
    const double dx = x - position.x(), dy = y - position.y();
    switch (shape) {
      case ShapeKind::kBox: {
        const double c = std::cos(-yaw), s = std::sin(-yaw);
        const double lx = c * dx - s * dy, ly = s * dx + c * dy;
        return std::abs(lx) <= half_extents.x() && std::abs(ly) <= half_extents.y();
      }
      case ShapeKind::kCylinder: return std::hypot(dx, dy) <= half_extents.x();
      case ShapeKind::kRing: {
        const double r = std::hypot(dx, dy);
        return r <= half_extents.x() && r >= half_extents.y();
      }
      case ShapeKind::kTool: return false;
    }
    return false;
  }

  bool operator==(const Object&) const = default;
};

struct GripperState {
  Eigen::Vector3d x_ee = Eigen::Vector3d::Zero();
  Fingers fingers = Fingers::kOpen;
  std::optional<int> attached;
  // Object position minus x_ee, captured at attach time.
  Eigen::Vector3d attach_offset = Eigen::Vector3d::Zero();

  bool operator==(const GripperState&) const = default;
};

struct Scene {
  std::vector<Object> objects;
  GripperState gripper;
  double table_z = 0.0;
  TaskId task = TaskId::kLifting;
  std::uint64_t seed = 0;
  int step_count = 0;

  const Object& object(const std::string& name) const {
    for (const auto& o : objects)
      if (o.name == name) return o;
    throw UsageError("scene has no object named " + name);
  }
  Object& object(const std::string& name) {
    for (auto& o : objects)
      if (o.name == name) return o;
    throw UsageError("scene has no object named " + name);
  }
  const Object& by_id(int id) const {
    for (const auto& o : objects)
      if (o.id == id) return o;
    throw UsageError("scene has no object with id " + std::to_string(id));
  }
  Object& by_id(int id) {
    for (auto& o : objects)
      if (o.id == id) return o;
    throw UsageError("scene has no object with id " + std::to_string(id));
  }
  bool is_attached(const std::string& name) const {
    return gripper.attached && by_id(*gripper.attached).name == name;
  }

  bool operator==(const Scene&) const = default;
};

/// Commanded end-effector displacement (meters) and finger command.
struct Action {
  std::array<float, 3> delta{0.f, 0.f, 0.f};
  Grip grip = Grip::kOpen;

  bool operator==(const Action&) const = default;
};

}  // namespace han::sim
