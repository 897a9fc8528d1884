#pragma once

#include <vector>

#include "han/diff/ops.hpp"
#include "han/geometry/camera.hpp"

namespace han::geo {

/// Differentiable unproject + cam_to_robot for keypoints uv [M,2] (row, col)
/// with per-keypoint depths held constant. Returns robot-frame points [M,3].
template <typename T>
diff::Var<T> lift_keypoints(const diff::Var<T>& uv, const std::vector<double>& depths, const CameraModel& cam) {
  if (uv.shape().size() != 2 || uv.dim(1) != 2) throw ConfigError("lift_keypoints: uv must be [M,2]");
  const int count = uv.dim(0);
  if (static_cast<int>(depths.size()) != count) throw ConfigError("lift_keypoints: one depth per keypoint required");
  for (double d : depths)
    if (!(d > 0)) throw InvalidDepthError("lift_keypoints: non-positive depth");

  const Eigen::Matrix3d& r = cam.extrinsic.rotation;
  const Eigen::Vector3d& t = cam.extrinsic.translation;
  diff::Tensor<T> out({count, 3});
  for (int m = 0; m < count; ++m) {
    const double u = uv.value().at2(m, 0), v = uv.value().at2(m, 1), d = depths[m];
    const Eigen::Vector3d p_cam((v - cam.cx) * d / cam.fx, (u - cam.cy) * d / cam.fy, d);
    const Eigen::Vector3d p = r * p_cam + t;
    for (int j = 0; j < 3; ++j) out.at2(m, j) = static_cast<T>(p[j]);
  }
  return diff::make_result<T>(std::move(out), {uv}, [depths, r, fx = cam.fx, fy = cam.fy, count](diff::Node<T>& n) {
    auto& buf = n.inputs[0]->grad_buffer();
    for (int m = 0; m < count; ++m) {
      const double d = depths[m];
      double gu = 0, gv = 0;
      for (int j = 0; j < 3; ++j) {
        const double g = n.grad[static_cast<std::size_t>(m) * 3 + j];
        gu += g * r(j, 1) * d / fy;
        gv += g * r(j, 0) * d / fx;
      }
      buf[static_cast<std::size_t>(m) * 2] += static_cast<T>(gu);
      buf[static_cast<std::size_t>(m) * 2 + 1] += static_cast<T>(gv);
    }
  });
}

}  // namespace han::geo
