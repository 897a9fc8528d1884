#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "han/geometry/camera.hpp"
#include "han/policy/config.hpp"

namespace han::policy {

/// Top-left corner of a crop_h x crop_w window, fully inside the image.
struct RegionProposal {
  int row = 0, col = 0;
  bool operator==(const RegionProposal&) const = default;
};

/// Uniform over all valid placements.
inline std::vector<RegionProposal> propose_regions(std::mt19937_64& rng, const PolicyConfig& cfg) {
  if (cfg.crop_h > cfg.image_h || cfg.crop_w > cfg.image_w) throw ConfigError("crop larger than image");
  std::uniform_int_distribution<int> rows(0, cfg.image_h - cfg.crop_h), cols(0, cfg.image_w - cfg.crop_w);
  std::vector<RegionProposal> out(cfg.regions);
  for (auto& r : out) {
    r.row = rows(rng);
    r.col = cols(rng);
  }
  return out;
}

/// Crop centered on the projected end effector, clamped into the image.
inline RegionProposal gripper_patch(const geo::CameraModel& cam, const Eigen::Vector3d& x_ee,
                                    const PolicyConfig& cfg) {
  double u = cam.cy, v = cam.cx;
  try {
    const auto px = geo::project(cam, geo::Point3::from(x_ee, geo::Frame::kRobot));
    u = px.u;
    v = px.v;
  } catch (const BehindCameraError&) {
  }
  auto place = [](double center, int size, int limit) {
    const double start = std::round(center - (size - 1) / 2.0);
    if (!std::isfinite(start)) return 0;
    return static_cast<int>(std::clamp(start, 0.0, static_cast<double>(limit - size)));
  };
  return {place(u, cfg.crop_h, cfg.image_h), place(v, cfg.crop_w, cfg.image_w)};
}

}  // namespace han::policy
