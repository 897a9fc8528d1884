#pragma once

#include <array>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "han/policy/regions.hpp"

namespace han::policy {

/// Values of one forward pass, detached from the graph. Fields a variant does
/// not compute are left empty.
struct PolicyOutput {
  std::vector<RegionProposal> regions;
  std::vector<std::array<double, 2>> keypoints_px;  // global (row, col)
  std::vector<Eigen::Vector3d> candidate_kps;
  std::vector<bool> background;                     // keypoint depth hit the far plane
  std::vector<double> confidences;
  std::optional<Eigen::Vector3d> x_kp;
  std::optional<Eigen::Vector3d> x_offset;
  std::optional<double> k;
  std::optional<Eigen::Vector3d> x_target;
  std::optional<RegionProposal> gripper_patch;
  double grip_logit = 0.0;
  std::array<double, 4> action{0, 0, 0, 0};

  int argmax_confidence() const {
    if (confidences.empty()) return -1;
    return static_cast<int>(std::max_element(confidences.begin(), confidences.end()) - confidences.begin());
  }
};

inline nlohmann::json to_json(const PolicyOutput& o) {
  auto vec = [](const Eigen::Vector3d& v) { return nlohmann::json{v.x(), v.y(), v.z()}; };
  nlohmann::json j;
  j["regions"] = nlohmann::json::array();
  for (const auto& r : o.regions) j["regions"].push_back({r.row, r.col});
  j["keypoints_px"] = o.keypoints_px;
  j["candidate_kps"] = nlohmann::json::array();
  for (const auto& p : o.candidate_kps) j["candidate_kps"].push_back(vec(p));
  j["background"] = o.background;
  j["confidences"] = o.confidences;
  j["x_kp"] = o.x_kp ? vec(*o.x_kp) : nlohmann::json();
  j["x_offset"] = o.x_offset ? vec(*o.x_offset) : nlohmann::json();
  j["k"] = o.k ? nlohmann::json(*o.k) : nlohmann::json();
  j["x_target"] = o.x_target ? vec(*o.x_target) : nlohmann::json();
  j["gripper_patch"] =
      o.gripper_patch ? nlohmann::json{o.gripper_patch->row, o.gripper_patch->col} : nlohmann::json();
  j["grip_logit"] = o.grip_logit;
  j["action"] = o.action;
  return j;
}

}  // namespace han::policy
