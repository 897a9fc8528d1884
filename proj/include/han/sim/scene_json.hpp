#pragma once

#include <nlohmann/json.hpp>

#include "han/sim/scene.hpp"
#include "han/sim/task.hpp"

namespace han::sim {

inline constexpr int kSceneJsonVersion = 1;

inline nlohmann::json vec_json(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

inline Eigen::Vector3d json_vec(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw FormatError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json to_json(const Object& o) {
  return {{"id", o.id},
          {"name", o.name},
          {"shape", to_string(o.shape)},
          {"half_extents", vec_json(o.half_extents)},
          {"position", vec_json(o.position)},
          {"yaw", o.yaw},
          {"color", {o.color[0], o.color[1], o.color[2]}},
          {"graspable", o.graspable}};
}

inline Object object_from_json(const nlohmann::json& j) {
  Object o;
  o.id = j.at("id").get<int>();
  o.name = j.at("name").get<std::string>();
  o.shape = parse_shape(j.at("shape").get<std::string>());
  o.half_extents = json_vec(j.at("half_extents"));
  o.position = json_vec(j.at("position"));
  o.yaw = j.at("yaw").get<double>();
  const auto& c = j.at("color");
  o.color = {c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(), c.at(2).get<std::uint8_t>()};
  o.graspable = j.at("graspable").get<bool>();
  return o;
}

inline nlohmann::json to_json(const Scene& s) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : s.objects) objects.push_back(to_json(o));
  nlohmann::json gripper = {{"x_ee", vec_json(s.gripper.x_ee)},
                            {"fingers", to_string(s.gripper.fingers)},
                            {"attached", s.gripper.attached ? nlohmann::json(*s.gripper.attached) : nlohmann::json()},
                            {"attach_offset", vec_json(s.gripper.attach_offset)}};
  return {{"version", kSceneJsonVersion}, {"task", to_string(s.task)}, {"seed", s.seed},
          {"table_z", s.table_z},         {"step", s.step_count},     {"objects", objects},
          {"gripper", gripper}};
}

inline Scene scene_from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kSceneJsonVersion)
      throw FormatError("unsupported scene version " + j.at("version").dump());
    Scene s;
    s.task = parse_task(j.at("task").get<std::string>());
    s.seed = j.at("seed").get<std::uint64_t>();
    s.table_z = j.at("table_z").get<double>();
    s.step_count = j.at("step").get<int>();
    for (const auto& o : j.at("objects")) s.objects.push_back(object_from_json(o));
    const auto& g = j.at("gripper");
    s.gripper.x_ee = json_vec(g.at("x_ee"));
    const auto fingers = g.at("fingers").get<std::string>();
    if (fingers != "open" && fingers != "closed") throw FormatError("bad finger state " + fingers);
    s.gripper.fingers = fingers == "open" ? Fingers::kOpen : Fingers::kClosed;
    if (!g.at("attached").is_null()) s.gripper.attached = g.at("attached").get<int>();
    s.gripper.attach_offset = json_vec(g.at("attach_offset"));
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed scene JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
}

inline nlohmann::json to_json(const SimConfig& c) {
  return {{"height", c.height},
          {"width", c.width},
          {"max_step", c.max_step},
          {"grasp_radius", c.grasp_radius},
          {"hook_radius", c.hook_radius},
          {"min_separation", c.min_separation},
          {"workspace_min", vec_json(c.workspace_min)},
          {"workspace_max", vec_json(c.workspace_max)},
          {"home", vec_json(c.home)},
          {"table_half", c.table_half},
          {"far_depth", c.far_depth},
          {"camera_distance", c.camera_distance},
          {"camera_pitch_deg", c.camera_pitch_deg},
          {"focal_per_width", c.focal_per_width}};
}

inline SimConfig sim_config_from_json(const nlohmann::json& j) {
  try {
    SimConfig c;
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.max_step = j.at("max_step").get<double>();
    c.grasp_radius = j.at("grasp_radius").get<double>();
    c.hook_radius = j.at("hook_radius").get<double>();
    c.min_separation = j.at("min_separation").get<double>();
    c.workspace_min = json_vec(j.at("workspace_min"));
    c.workspace_max = json_vec(j.at("workspace_max"));
    c.home = json_vec(j.at("home"));
    c.table_half = j.at("table_half").get<double>();
    c.far_depth = j.at("far_depth").get<double>();
    c.camera_distance = j.at("camera_distance").get<double>();
    c.camera_pitch_deg = j.at("camera_pitch_deg").get<double>();
    c.focal_per_width = j.at("focal_per_width").get<double>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed sim config JSON: ") + e.what());
  }
}

/// Rotation is row-major.
inline nlohmann::json to_json(const geo::CameraModel& cam) {
  nlohmann::json rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(cam.extrinsic.rotation(r, c));
  return {{"fx", cam.fx},         {"fy", cam.fy},         {"cx", cam.cx},      {"cy", cam.cy},
          {"height", cam.height}, {"width", cam.width},   {"rotation", rot},   {"translation", vec_json(cam.extrinsic.translation)}};
}

inline geo::CameraModel camera_from_json(const nlohmann::json& j) {
  try {
    geo::CameraModel cam;
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.height = j.at("height").get<int>();
    cam.width = j.at("width").get<int>();
    const auto& rot = j.at("rotation");
    if (rot.size() != 9) throw FormatError("camera rotation needs 9 entries");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) cam.extrinsic.rotation(r, c) = rot.at(r * 3 + c).get<double>();
    cam.extrinsic.translation = json_vec(j.at("translation"));
    cam.validate();
    return cam;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed camera JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
}

}  // namespace han::sim
