#pragma once

#include <cmath>

#include "han/diff/ops.hpp"

namespace han::train {

using diff::Var;

inline constexpr double kCosineClampEps = 1e-7;
inline constexpr double kCosineMinNorm = 1e-8;

/// Behavior-cloning loss, averaged over the batch:
///   |a - a*|^2 + lambda * acos(cos(a, a*))
/// The cosine argument is clamped to [-1+eps, 1-eps]; the angular term is
/// dropped for a sample when either vector is (near) zero.
template <typename T>
Var<T> bc_loss(const Var<T>& action, const diff::Tensor<T>& target, double lambda) {
  if (action.shape().size() != 2) throw ConfigError("bc_loss: action must be [B,D]");
  if (action.shape() != target.shape)
    throw ConfigError("bc_loss: action " + diff::shape_str(action.shape()) + " vs target " +
                      diff::shape_str(target.shape));
  if (!(lambda >= 0)) throw ConfigError("bc_loss: lambda must be >= 0");
  const int B = action.dim(0), D = action.dim(1);
  for (T v : target.data)
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("bc_loss: non-finite demonstrated action");
  auto grads = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B) * D, 0.0);
  double total = 0;
  for (int b = 0; b < B; ++b) {
    const T* a = action.value().data.data() + static_cast<std::size_t>(b) * D;
    const T* t = target.data.data() + static_cast<std::size_t>(b) * D;
    double* g = grads->data() + static_cast<std::size_t>(b) * D;
    double sq = 0, dot = 0, na2 = 0, nt2 = 0;
    for (int j = 0; j < D; ++j) {
      const double d = static_cast<double>(a[j]) - t[j];
      sq += d * d;
      g[j] = 2 * d;
      dot += static_cast<double>(a[j]) * t[j];
      na2 += static_cast<double>(a[j]) * a[j];
      nt2 += static_cast<double>(t[j]) * t[j];
    }
    total += sq;
    const double na = std::sqrt(na2), nt = std::sqrt(nt2);
    if (lambda > 0 && na >= kCosineMinNorm && nt >= kCosineMinNorm) {
      const double cos = dot / (na * nt);
      const double lo = -1 + kCosineClampEps, hi = 1 - kCosineClampEps;
      const double clamped = std::clamp(cos, lo, hi);
      total += lambda * std::acos(clamped);
      if (cos > lo && cos < hi) {
        const double dacos = -1.0 / std::sqrt(1 - cos * cos);
        for (int j = 0; j < D; ++j) {
          const double dcos = t[j] / (na * nt) - cos * a[j] / na2;
          g[j] += lambda * dacos * dcos;
        }
      }
    }
  }
  diff::Tensor<T> out({1});
  out.data[0] = static_cast<T>(total / B);
  return diff::make_result<T>(std::move(out), {action}, [grads, B](diff::Node<T>& n) {
    auto& buf = n.inputs[0]->grad_buffer();
    const double scale = static_cast<double>(n.grad[0]) / B;
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += static_cast<T>((*grads)[i] * scale);
  });
}

}  // namespace han::train
