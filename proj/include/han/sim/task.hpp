#pragma once

#include <optional>
#include <string>
#include <vector>

#include "han/geometry/camera.hpp"
#include "han/sim/scene.hpp"

namespace han::sim {

/// Axis-aligned rectangle on the table plane (object base centers).
struct Rect {
  double x_min, x_max, y_min, y_max;

  double area() const { return (x_max - x_min) * (y_max - y_min); }
  bool contains(double x, double y) const { return x >= x_min && x <= x_max && y >= y_min && y <= y_max; }
  bool overlaps(const Rect& o) const {
    return x_min < o.x_max && o.x_min < x_max && y_min < o.y_max && o.y_min < y_max;
  }
};

struct ObjectTemplate {
  Object prototype;  // pose filled at reset
  std::vector<Rect> interpolation;
  std::vector<Rect> extrapolation;

  const std::vector<Rect>& regions(Region r) const {
    return r == Region::kInterpolation ? interpolation : extrapolation;
  }
};

struct TaskSpec {
  TaskId id = TaskId::kLifting;
  std::vector<ObjectTemplate> objects;
  int max_steps = 120;
  // Tool-using only: the end effector may not move to x beyond this line.
  std::optional<double> reach_limit_x;
};

/// Simulator-wide constants.
struct SimConfig {
  int height = 60;
  int width = 80;
  double max_step = 0.02;
  double grasp_radius = 0.03;
  double hook_radius = 0.03;
  double min_separation = 0.04;
  Eigen::Vector3d workspace_min{-0.30, -0.30, 0.01};
  Eigen::Vector3d workspace_max{0.30, 0.30, 0.35};
  Eigen::Vector3d home{-0.15, 0.0, 0.20};
  double table_half = 0.4;
  double far_depth = 10.0;
  // Front-view camera: 1.2 m from the table center at 45 degrees pitch.
  double camera_distance = 1.2;
  double camera_pitch_deg = 45.0;
  double focal_per_width = 1.25;

  void validate() const {
    if (height < 8 || width < 8) throw ConfigError("render resolution too small");
    if (!(max_step > 0)) throw ConfigError("max_step must be positive");
  }
};

inline SimConfig paper_scale_config() {
  SimConfig c;
  c.height = 120;
  c.width = 160;
  return c;
}

inline geo::CameraModel make_camera(const SimConfig& cfg) {
  cfg.validate();
  const double pitch = cfg.camera_pitch_deg * 3.14159265358979323846 / 180.0;
  const Eigen::Vector3d eye(cfg.camera_distance * std::cos(pitch), 0.0, cfg.camera_distance * std::sin(pitch));
  geo::CameraModel cam;
  cam.height = cfg.height;
  cam.width = cfg.width;
  cam.fx = cam.fy = cfg.focal_per_width * cfg.width;
  cam.cx = (cfg.width - 1) / 2.0;
  cam.cy = (cfg.height - 1) / 2.0;
  cam.extrinsic = geo::look_at(eye, Eigen::Vector3d::Zero());
  cam.validate();
  return cam;
}

namespace palette {
inline constexpr img::Rgb kRed{200, 35, 35};
inline constexpr img::Rgb kGreen{40, 170, 60};
inline constexpr img::Rgb kBlue{40, 70, 210};
inline constexpr img::Rgb kWood{140, 90, 45};
inline constexpr img::Rgb kTool{225, 195, 45};
inline constexpr img::Rgb kTable{185, 175, 155};
inline constexpr img::Rgb kBackground{35, 35, 45};
inline constexpr img::Rgb kGripperBody{70, 70, 80};
inline constexpr img::Rgb kGripperFinger{130, 130, 140};
}  // namespace palette

inline Object make_box(int id, std::string name, double half, img::Rgb color) {
  Object o;
  o.id = id;
  o.name = std::move(name);
  o.shape = ShapeKind::kBox;
  o.half_extents = {half, half, half};
  o.color = color;
  o.graspable = true;
  return o;
}

inline TaskSpec make_task(TaskId id) {
  TaskSpec t;
  t.id = id;
  switch (id) {
    case TaskId::kLifting: {
      ObjectTemplate cube{make_box(0, "cube", 0.02, palette::kRed), {}, {}};
      cube.interpolation = {{-0.08, 0.08, -0.08, 0.08}};
      cube.extrapolation = {{-0.08, 0.08, 0.12, 0.22}, {-0.08, 0.08, -0.22, -0.12}};
      t.objects = {cube};
      t.max_steps = 120;
      break;
    }
    case TaskId::kStacking: {
      ObjectTemplate cube{make_box(0, "cube", 0.02, palette::kRed), {}, {}};
      cube.interpolation = {{-0.10, 0.05, 0.03, 0.12}};
      cube.extrapolation = {{-0.10, 0.05, 0.16, 0.24}};
      Object plate;
      plate.id = 1;
      plate.name = "plate";
      plate.shape = ShapeKind::kCylinder;
      plate.half_extents = {0.05, 0.05, 0.005};
      plate.color = palette::kGreen;
      ObjectTemplate plate_t{plate, {{-0.10, 0.05, -0.12, -0.03}}, {{-0.10, 0.05, -0.24, -0.16}}};
      t.objects = {cube, plate_t};
      t.max_steps = 200;
      break;
    }
    case TaskId::kToolUsing: {
      ObjectTemplate cube{make_box(0, "cube", 0.02, palette::kBlue), {}, {}};
      cube.interpolation = {{0.15, 0.20, -0.04, 0.04}};
      cube.extrapolation = {{0.15, 0.20, 0.06, 0.12}};
      Object tool;
      tool.id = 1;
      tool.name = "tool";
      tool.shape = ShapeKind::kTool;
      tool.color = palette::kTool;
      tool.graspable = true;
      ObjectTemplate tool_t{tool, {{-0.12, -0.06, -0.12, -0.06}}, {{-0.12, -0.06, -0.20, -0.14}}};
      Object ring;
      ring.id = 2;
      ring.name = "ring";
      ring.shape = ShapeKind::kRing;
      ring.half_extents = {0.06, 0.045, 0.015};
      ring.color = palette::kWood;
      ObjectTemplate ring_t{ring, {{-0.15, -0.05, 0.10, 0.16}}, {{-0.15, -0.05, 0.18, 0.24}}};
      t.objects = {cube, tool_t, ring_t};
      t.max_steps = 400;
      t.reach_limit_x = 0.10;
      break;
    }
  }
  return t;
}

}  // namespace han::sim
