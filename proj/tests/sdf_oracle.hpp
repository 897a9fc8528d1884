#pragma once

// Independent signed-distance oracle for rendered depth checks.

#include <algorithm>
#include <cmath>

#include "han/sim/render.hpp"

namespace sdf_oracle {

using namespace han::sim;

// Signed distance to an oriented box.
inline double box_sdf(const OrientedBox& b, const Eigen::Vector3d& p) {
  const Eigen::Vector3d rel = p - b.center;
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const Eigen::Vector3d local(c * rel.x() + s * rel.y(), -s * rel.x() + c * rel.y(), rel.z());
  const Eigen::Vector3d q = local.cwiseAbs() - b.half;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

inline double annulus_sdf(const Annulus& a, const Eigen::Vector3d& p) {
  const double r = std::hypot(p.x() - a.axis_base.x(), p.y() - a.axis_base.y());
  const double mid = (a.r_out + a.r_in) / 2, half_w = (a.r_out - a.r_in) / 2;
  const double zc = (a.z_min + a.z_max) / 2, half_h = (a.z_max - a.z_min) / 2;
  const double qr = std::abs(r - mid) - half_w, qz = std::abs(p.z() - zc) - half_h;
  return std::hypot(std::max(qr, 0.0), std::max(qz, 0.0)) + std::min(std::max(qr, qz), 0.0);
}

inline double scene_sdf(const SceneGeometry& geo, const Eigen::Vector3d& p) {
  double d = std::abs(p.z() - geo.table_z);
  for (const auto& b : geo.boxes) d = std::min(d, std::abs(box_sdf(b, p)));
  for (const auto& a : geo.annuli) d = std::min(d, std::abs(annulus_sdf(a, p)));
  return d;
}

}  // namespace sdf_oracle
