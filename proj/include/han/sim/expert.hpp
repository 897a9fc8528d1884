#pragma once

#include <random>
#include <string>

#include "han/sim/simulator.hpp"

namespace han::sim {

struct ExpertConfig {
  double gain = 0.5;
  double approach_height = 0.06;
  double carry_height = 0.12;
  double lift_height = 0.15;
  double align_tolerance = 0.015;  // horizontal error before descending
  double close_tolerance = 0.01;   // 3D error before closing on a grasp point
  double release_tolerance = 0.006;
  double pulled_x = 0.05;          // tool_using: cube counts as within reach below this x
  double noise_scale = 0.2;        // noise sigma as a fraction of max_step
};

struct ExpertResult {
  Action action;
  std::string stage;
  bool failed = false;  // waypoint outside the reachable workspace
};

namespace detail {

struct Waypoint {
  Eigen::Vector3d target;
  Grip grip;
  std::string stage;
};

/// Approach above the grasp point, descend, close.
inline Waypoint grasp_waypoint(const GripperState& g, const Object& obj, const ExpertConfig& ec, const char* name) {
  const Eigen::Vector3d p = obj.grasp_point();
  if (g.fingers == Fingers::kClosed)
    return {g.x_ee + Eigen::Vector3d(0, 0, 0.02), Grip::kOpen, std::string("reopen_") + name};
  if (horizontal_distance(g.x_ee, p) > ec.align_tolerance + 0.005)
    return {p + Eigen::Vector3d(0, 0, ec.approach_height), Grip::kOpen, std::string("approach_") + name};
  if ((g.x_ee - p).norm() < ec.close_tolerance) return {p, Grip::kClose, std::string("close_") + name};
  return {p, Grip::kOpen, std::string("descend_") + name};
}

/// Carry the attached object so that its base lands at (xy, base_z), then release.
inline Waypoint place_waypoint(const GripperState& g, const Eigen::Vector2d& xy, double base_z,
                               const ExpertConfig& ec) {
  const Eigen::Vector3d over(xy.x() - g.attach_offset.x(), xy.y() - g.attach_offset.y(), ec.carry_height);
  if (std::hypot(g.x_ee.x() - over.x(), g.x_ee.y() - over.y()) > ec.align_tolerance) return {over, Grip::kClose, "carry"};
  const Eigen::Vector3d down(over.x(), over.y(), base_z - g.attach_offset.z());
  if (std::abs(g.x_ee.z() - down.z()) < ec.release_tolerance) return {down, Grip::kOpen, "release"};
  return {down, Grip::kClose, "lower"};
}

inline Waypoint waypoint(const TaskSpec& task, const Scene& s, const ExpertConfig& ec) {
  const auto& g = s.gripper;
  switch (task.id) {
    case TaskId::kLifting: {
      const auto& cube = s.object("cube");
      if (s.is_attached("cube"))
        return {{g.x_ee.x(), g.x_ee.y(), s.table_z + cube.height() / 2 + ec.lift_height}, Grip::kClose, "lift"};
      return grasp_waypoint(g, cube, ec, "cube");
    }
    case TaskId::kStacking: {
      const auto& cube = s.object("cube");
      const auto& plate = s.object("plate");
      if (s.is_attached("cube"))
        return place_waypoint(g, plate.position.head<2>(), plate.top() + 0.01, ec);
      return grasp_waypoint(g, cube, ec, "cube");
    }
    case TaskId::kToolUsing: {
      const auto& cube = s.object("cube");
      const auto& tool = s.object("tool");
      const auto& ring = s.object("ring");
      if (s.is_attached("cube")) return place_waypoint(g, ring.position.head<2>(), s.table_z + 0.01, ec);
      const bool tool_held = s.is_attached("tool");
      if (cube.position.x() <= ec.pulled_x) {
        if (tool_held) return {g.x_ee, Grip::kOpen, "drop_tool"};
        return grasp_waypoint(g, cube, ec, "cube");
      }
      if (!tool_held) return grasp_waypoint(g, tool, ec, "tool");
      const Eigen::Vector3d hook = tool.to_world(ToolGeometry::hook_local());
      const Eigen::Vector3d hook_from_ee = hook - g.x_ee;
      const double tool_lift = tool.position.z() - s.table_z;
      const double hook_err = horizontal_distance(hook, cube.center());
      if (tool_lift < 0.005 && hook_err <= 0.02) {
        // Drag the cube back toward the reachable side.
        const double pull = cube.position.x() - (ec.pulled_x - 0.02);
        return {{g.x_ee.x() - pull, g.x_ee.y(), s.table_z - hook_from_ee.z()}, Grip::kClose, "pull"};
      }
      const Eigen::Vector3d hover(cube.position.x(), cube.position.y(), cube.top() + 0.03);
      if (hook_err > 0.01 && !(tool_lift < 0.03 && hook_err <= 0.02))
        return {hover - hook_from_ee, Grip::kClose, "hover_hook"};
      const Eigen::Vector3d low(cube.position.x(), cube.position.y(), s.table_z);
      return {low - hook_from_ee, Grip::kClose, "lower_hook"};
    }
  }
  throw UsageError("unknown task");
}

}  // namespace detail

/// Stateless stage expert: the stage is read off the scene. Proportional
/// control toward the stage waypoint, optional Gaussian noise, clipped.
inline ExpertResult scripted_expert(const TaskSpec& task, const Scene& scene, const SimConfig& cfg,
                                    std::mt19937_64* noise_rng = nullptr, const ExpertConfig& ec = {}) {
  const detail::Waypoint wp = detail::waypoint(task, scene, ec);
  ExpertResult out;
  out.stage = wp.stage;
  const Eigen::Vector3d reachable = clamp_to_workspace(task, cfg, wp.target);
  out.failed = (reachable - wp.target).norm() > 1e-6;
  Eigen::Vector3d d = ec.gain * (wp.target - scene.gripper.x_ee);
  if (noise_rng) {
    std::normal_distribution<double> noise(0.0, ec.noise_scale * cfg.max_step);
    for (int i = 0; i < 3; ++i) d[i] += noise(*noise_rng);
  }
  for (int i = 0; i < 3; ++i) out.action.delta[i] = static_cast<float>(std::clamp(d[i], -cfg.max_step, cfg.max_step));
  out.action.grip = wp.grip;
  return out;
}

}  // namespace han::sim
