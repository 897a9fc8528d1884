#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "han/sim/task.hpp"

namespace han::sim {

inline double horizontal_distance(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::hypot(a.x() - b.x(), a.y() - b.y());
}

inline const Rect& pick_rect(const std::vector<Rect>& rects, std::mt19937_64& rng) {
  if (rects.empty()) throw ConfigError("object has no initialization region");
  double total = 0;
  for (const auto& r : rects) total += r.area();
  std::uniform_real_distribution<double> pick(0.0, total);
  double x = pick(rng);
  for (const auto& r : rects) {
    if (x < r.area()) return r;
    x -= r.area();
  }
  return rects.back();
}

/// Samples object positions uniformly in the requested region, rejecting
/// layouts whose centers come closer than `min_separation`.
inline Scene reset(const TaskSpec& task, Region region, std::uint64_t seed, const SimConfig& cfg = {}) {
  std::mt19937_64 rng(seed);
  Scene scene;
  scene.task = task.id;
  scene.seed = seed;
  scene.table_z = 0.0;
  scene.gripper.x_ee = cfg.home;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    scene.objects.clear();
    for (const auto& tmpl : task.objects) {
      const Rect& rect = pick_rect(tmpl.regions(region), rng);
      std::uniform_real_distribution<double> ux(rect.x_min, rect.x_max), uy(rect.y_min, rect.y_max);
      Object o = tmpl.prototype;
      const double x = ux(rng);
      const double y = uy(rng);
      o.position = {x, y, scene.table_z};
      scene.objects.push_back(o);
    }
    bool separated = true;
    for (std::size_t i = 0; i < scene.objects.size() && separated; ++i)
      for (std::size_t j = i + 1; j < scene.objects.size(); ++j)
        if (horizontal_distance(scene.objects[i].position, scene.objects[j].position) < cfg.min_separation) {
          separated = false;
          break;
        }
    if (separated) return scene;
  }
  throw ConfigError(std::string("could not sample a separated layout for task ") + to_string(task.id));
}

/// Height an object released at (x, y) comes to rest at.
inline double support_height(const Scene& scene, int dropped_id, double x, double y) {
  double z = scene.table_z;
  for (const auto& o : scene.objects) {
    if (o.id == dropped_id) continue;
    if (scene.gripper.attached && *scene.gripper.attached == o.id) continue;
    if (o.supports(x, y)) z = std::max(z, o.top());
  }
  return z;
}

inline Eigen::Vector3d clamp_to_workspace(const TaskSpec& task, const SimConfig& cfg, Eigen::Vector3d p) {
  p = p.cwiseMax(cfg.workspace_min).cwiseMin(cfg.workspace_max);
  if (task.reach_limit_x) p.x() = std::min(p.x(), *task.reach_limit_x);
  return p;
}

/// Advances the scene by one kinematic step.
inline Scene step(const TaskSpec& task, const Scene& scene, const Action& action, const SimConfig& cfg = {}) {
  Scene next = scene;
  ++next.step_count;
  auto& grip = next.gripper;

  Eigen::Vector3d delta;
  for (int i = 0; i < 3; ++i) {
    const double d = std::isfinite(action.delta[i]) ? static_cast<double>(action.delta[i]) : 0.0;
    delta[i] = std::clamp(d, -cfg.max_step, cfg.max_step);
  }
  const Eigen::Vector3d target = clamp_to_workspace(task, cfg, grip.x_ee + delta);
  const Eigen::Vector3d moved = target - grip.x_ee;

  // Objects caught by the hook of a held tool, evaluated before the move.
  std::vector<int> hooked;
  if (grip.attached) {
    const Object& held = next.by_id(*grip.attached);
    if (held.shape == ShapeKind::kTool) {
      const Eigen::Vector3d hook = held.to_world(ToolGeometry::hook_local());
      for (const auto& o : next.objects)
        if (o.id != held.id && o.graspable && held.position.z() <= o.top() &&
            horizontal_distance(hook, o.center()) <= cfg.hook_radius)
          hooked.push_back(o.id);
    }
  }

  grip.x_ee = target;
  if (grip.attached) next.by_id(*grip.attached).position = grip.x_ee + grip.attach_offset;
  if (moved.x() < 0)
    for (int id : hooked) {
      auto& o = next.by_id(id);
      o.position.x() += moved.x();
      o.position.y() += moved.y();
    }

  if (action.grip == Grip::kClose && grip.fingers == Fingers::kOpen) {
    grip.fingers = Fingers::kClosed;
    const Object* best = nullptr;
    double best_dist = cfg.grasp_radius;
    for (const auto& o : next.objects) {
      if (!o.graspable) continue;
      const double d = (o.grasp_point() - grip.x_ee).norm();
      if (d <= best_dist) {
        best_dist = d;
        best = &o;
      }
    }
    if (best) {
      grip.attached = best->id;
      grip.attach_offset = best->position - grip.x_ee;
    }
  } else if (action.grip == Grip::kOpen && grip.fingers == Fingers::kClosed) {
    grip.fingers = Fingers::kOpen;
    if (grip.attached) {
      const int id = *grip.attached;
      grip.attached.reset();
      grip.attach_offset = Eigen::Vector3d::Zero();
      auto& o = next.by_id(id);
      o.position.z() = support_height(next, id, o.position.x(), o.position.y());
    }
  }
  return next;
}

inline bool success(const TaskSpec& task, const Scene& scene) {
  switch (task.id) {
    case TaskId::kLifting: {
      const auto& cube = scene.object("cube");
      return scene.is_attached("cube") && cube.position.z() >= scene.table_z + 0.10;
    }
    case TaskId::kStacking: {
      const auto& cube = scene.object("cube");
      const auto& plate = scene.object("plate");
      return !scene.is_attached("cube") &&
             horizontal_distance(cube.position, plate.position) <= plate.half_extents.x() &&
             std::abs(cube.position.z() - plate.top()) < 1e-9;
    }
    case TaskId::kToolUsing: {
      const auto& cube = scene.object("cube");
      const auto& ring = scene.object("ring");
      return !scene.is_attached("cube") &&
             horizontal_distance(cube.position, ring.position) < ring.half_extents.y() &&
             std::abs(cube.position.z() - scene.table_z) < 1e-9;
    }
  }
  return false;
}

}  // namespace han::sim
