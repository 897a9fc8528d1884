#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "han/eval/rollout.hpp"
#include "han/image/png.hpp"

namespace han::eval {

inline constexpr img::Rgb kKeypointColor{30, 90, 255};
inline constexpr img::Rgb kTargetColor{255, 230, 0};
inline constexpr img::Rgb kRegionColor{255, 0, 0};

struct OverlayOptions {
  int scale = 4;  // nearest-neighbor upscaling factor
  int marker_radius = 3;
};

inline img::RgbImage upscale(const img::RgbImage& im, int s) {
  img::RgbImage out(im.height * s, im.width * s);
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c) out.set(r, c, im.at(r / s, c / s));
  return out;
}

/// Where a source-image pixel coordinate lands in the upscaled image.
inline std::array<double, 2> upscaled_position(double u, double v, int s) {
  return {(u + 0.5) * s - 0.5, (v + 0.5) * s - 0.5};
}

inline void draw_disc(img::RgbImage& im, double u, double v, int radius, img::Rgb color) {
  const int r0 = static_cast<int>(std::floor(u - radius)), r1 = static_cast<int>(std::ceil(u + radius));
  const int c0 = static_cast<int>(std::floor(v - radius)), c1 = static_cast<int>(std::ceil(v + radius));
  for (int r = std::max(r0, 0); r <= std::min(r1, im.height - 1); ++r)
    for (int c = std::max(c0, 0); c <= std::min(c1, im.width - 1); ++c)
      if ((r - u) * (r - u) + (c - v) * (c - v) <= radius * radius) im.set(r, c, color);
}

inline void draw_rect(img::RgbImage& im, int row, int col, int h, int w, img::Rgb color) {
  auto put = [&](int r, int c) {
    if (r >= 0 && r < im.height && c >= 0 && c < im.width) im.set(r, c, color);
  };
  for (int c = col; c < col + w; ++c) {
    put(row, c);
    put(row + h - 1, c);
  }
  for (int r = row; r < row + h; ++r) {
    put(r, col);
    put(r, col + w - 1);
  }
}

/// Blue discs at projected candidate keypoints, a yellow disc at the action
/// target and the highest-confidence region outlined in red.
inline img::RgbImage overlay_frame(const img::RgbImage& rgb, const policy::PolicyOutput& o,
                                   const geo::CameraModel& cam, int crop_h, int crop_w, const OverlayOptions& opt = {}) {
  img::RgbImage im = upscale(rgb, opt.scale);
  auto marker = [&](const Eigen::Vector3d& p, img::Rgb color) {
    try {
      const auto px = geo::project(cam, geo::Point3::from(p, geo::Frame::kRobot));
      const auto [u, v] = upscaled_position(px.u, px.v, opt.scale);
      draw_disc(im, u, v, opt.marker_radius, color);
    } catch (const BehindCameraError&) {
    }
  };
  const int best = o.argmax_confidence();
  if (best >= 0 && best < static_cast<int>(o.regions.size())) {
    const auto& reg = o.regions[best];
    draw_rect(im, reg.row * opt.scale, reg.col * opt.scale, crop_h * opt.scale, crop_w * opt.scale, kRegionColor);
  }
  for (const auto& p : o.candidate_kps) marker(p, kKeypointColor);
  if (o.x_target) marker(*o.x_target, kTargetColor);
  return im;
}

/// Writes frame_0000.png ... one per rollout step; returns the paths.
inline std::vector<std::string> export_overlays(const Rollout& r, const geo::CameraModel& cam, int crop_h, int crop_w,
                                                const std::string& dir, const OverlayOptions& opt = {}) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  for (std::size_t t = 0; t < r.steps.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04zu.png", t);
    const auto path = (std::filesystem::path(dir) / name).string();
    img::write_png(path, overlay_frame(r.steps[t].rgb, r.steps[t].output, cam, crop_h, crop_w, opt));
    paths.push_back(path);
  }
  return paths;
}

}  // namespace han::eval
