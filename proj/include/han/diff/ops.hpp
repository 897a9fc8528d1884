#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "han/diff/autograd.hpp"

namespace han::diff {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank)
    throw ConfigError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
}

template <typename T>
void accumulate(Node<T>& node, std::size_t input, const std::vector<T>& g) {
  auto& in = *node.inputs[input];
  if (!in.requires_grad) return;
  auto& buf = in.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    detail::accumulate(n, 0, n.grad);
    detail::accumulate(n, 1, n.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    detail::accumulate(n, 0, n.grad);
    if (n.inputs[1]->requires_grad) {
      auto& buf = n.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < n.grad.size(); ++i) buf[i] -= n.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const auto& av = n.inputs[0]->value.data;
    const auto& bv = n.inputs[1]->value.data;
    if (n.inputs[0]->requires_grad) {
      auto& buf = n.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < n.grad.size(); ++i) buf[i] += n.grad[i] * bv[i];
    }
    if (n.inputs[1]->requires_grad) {
      auto& buf = n.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < n.grad.size(); ++i) buf[i] += n.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v *= s;
  return make_result<T>(std::move(out), {a}, [s](Node<T>& n) {
    auto& buf = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) buf[i] += n.grad[i] * s;
  });
}

/// y = x * mult + shift elementwise, with constant per-element coefficients.
template <typename T>
Var<T> affine(const Var<T>& x, std::vector<T> mult, std::vector<T> shift) {
  if (mult.size() != x.size() || shift.size() != x.size())
    throw ConfigError("affine: coefficient length does not match " + shape_str(x.shape()));
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * mult[i] + shift[i];
  return make_result<T>(std::move(out), {x}, [mult = std::move(mult)](Node<T>& n) {
    auto& buf = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) buf[i] += n.grad[i] * mult[i];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ConfigError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor<T> out(std::move(shape), x.value().data);
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) { detail::accumulate(n, 0, n.grad); });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data) v = v < T(0) ? T(0) : v;  // NaN passes through
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& buf = n.inputs[0]->grad_buffer();
    const auto& xv = n.inputs[0]->value.data;
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (xv[i] > T(0)) buf[i] += n.grad[i];
  });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data) v = std::tanh(v);
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& buf = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      T y = n.value.data[i];
      buf[i] += n.grad[i] * (T(1) - y * y);
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& buf = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      T y = n.value.data[i];
      buf[i] += n.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total = T(0);
  for (T v : x.value().data) total += v;
  return make_result<T>(Tensor<T>({1}, {total}), {x}, [](Node<T>& n) {
    auto& buf = n.inputs[0]->grad_buffer();
    for (auto& g : buf) g += n.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  if (x.size() == 0) throw ConfigError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// Affine map over rows: x[B,In] * W[Out,In]^T + b[Out].
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  detail::require_rank(x.shape(), 2, "linear input");
  detail::require_rank(weight.shape(), 2, "linear weight");
  const int batch = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in)
    throw ConfigError("linear: input width " + std::to_string(in) + " does not match weight " +
                      shape_str(weight.shape()));
  if (bias.shape() != Shape{out_dim})
    throw ConfigError("linear: bias " + shape_str(bias.shape()) + " for " + std::to_string(out_dim) + " outputs");

  Tensor<T> out({batch, out_dim});
  detail::MatMap<T> y(out.data.data(), batch, out_dim);
  detail::ConstMatMap<T> xm(x.value().data.data(), batch, in);
  detail::ConstMatMap<T> wm(weight.value().data.data(), out_dim, in);
  y.noalias() = xm * wm.transpose();
  for (int r = 0; r < batch; ++r)
    for (int c = 0; c < out_dim; ++c) y(r, c) += bias.value()[c];

  return make_result<T>(std::move(out), {x, weight, bias}, [batch, in, out_dim](Node<T>& n) {
    detail::ConstMatMap<T> g(n.grad.data(), batch, out_dim);
    auto& xn = *n.inputs[0];
    auto& wn = *n.inputs[1];
    auto& bn = *n.inputs[2];
    if (xn.requires_grad) {
      detail::MatMap<T> dx(xn.grad_buffer().data(), batch, in);
      detail::ConstMatMap<T> wm(wn.value.data.data(), out_dim, in);
      dx.noalias() += g * wm;
    }
    if (wn.requires_grad) {
      detail::MatMap<T> dw(wn.grad_buffer().data(), out_dim, in);
      detail::ConstMatMap<T> xm(xn.value.data.data(), batch, in);
      dw.noalias() += g.transpose() * xm;
    }
    if (bn.requires_grad) {
      auto& db = bn.grad_buffer();
      for (int r = 0; r < batch; ++r)
        for (int c = 0; c < out_dim; ++c) db[c] += g(r, c);
    }
  });
}

/// Softmax along the last axis of a [B,N] tensor.
template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  detail::require_rank(x.shape(), 2, "softmax_rows");
  const int rows = x.dim(0), cols = x.dim(1);
  Tensor<T> out = x.value();
  for (int r = 0; r < rows; ++r) {
    T* row = out.data.data() + static_cast<std::size_t>(r) * cols;
    T mx = *std::max_element(row, row + cols);
    T total = T(0);
    for (int c = 0; c < cols; ++c) total += (row[c] = std::exp(row[c] - mx));
    for (int c = 0; c < cols; ++c) row[c] /= total;
  }
  return make_result<T>(std::move(out), {x}, [rows, cols](Node<T>& n) {
    auto& buf = n.inputs[0]->grad_buffer();
    for (int r = 0; r < rows; ++r) {
      const std::size_t off = static_cast<std::size_t>(r) * cols;
      T dot = T(0);
      for (int c = 0; c < cols; ++c) dot += n.grad[off + c] * n.value.data[off + c];
      for (int c = 0; c < cols; ++c) buf[off + c] += n.value.data[off + c] * (n.grad[off + c] - dot);
    }
  });
}

/// Concatenates [B,Di] tensors along columns.
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no inputs");
  const int rows = parts[0].dim(0);
  std::vector<int> widths;
  int total = 0;
  for (const auto& p : parts) {
    detail::require_rank(p.shape(), 2, "concat_cols");
    if (p.dim(0) != rows) throw ConfigError("concat_cols: row count mismatch " + shape_str(p.shape()));
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  Tensor<T> out({rows, total});
  int col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < widths[k]; ++c) out.at2(r, col + c) = parts[k].value().at2(r, c);
    col += widths[k];
  }
  return make_result<T>(std::move(out), parts, [rows, total, widths](Node<T>& n) {
    int col = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (n.inputs[k]->requires_grad) {
        auto& buf = n.inputs[k]->grad_buffer();
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < widths[k]; ++c)
            buf[static_cast<std::size_t>(r) * widths[k] + c] += n.grad[static_cast<std::size_t>(r) * total + col + c];
      }
      col += widths[k];
    }
  });
}

/// Columns [begin, end) of a [B,D] tensor.
template <typename T>
Var<T> slice_cols(const Var<T>& x, int begin, int end) {
  detail::require_rank(x.shape(), 2, "slice_cols");
  const int rows = x.dim(0), cols = x.dim(1);
  if (begin < 0 || end > cols || begin >= end)
    throw ConfigError("slice_cols: bad range [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                      shape_str(x.shape()));
  const int width = end - begin;
  Tensor<T> out({rows, width});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < width; ++c) out.at2(r, c) = x.value().at2(r, begin + c);
  return make_result<T>(std::move(out), {x}, [rows, cols, begin, width](Node<T>& n) {
    auto& buf = n.inputs[0]->grad_buffer();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < width; ++c)
        buf[static_cast<std::size_t>(r) * cols + begin + c] += n.grad[static_cast<std::size_t>(r) * width + c];
  });
}

/// Leading-axis slice [begin, end) of any tensor.
template <typename T>
Var<T> slice_rows(const Var<T>& x, int begin, int end) {
  if (x.shape().empty()) throw ConfigError("slice_rows on scalar");
  const int rows = x.dim(0);
  if (begin < 0 || end > rows || begin >= end)
    throw ConfigError("slice_rows: bad range of " + shape_str(x.shape()));
  const std::size_t stride = rows ? x.size() / rows : 0;
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<T> values(x.value().data.begin() + begin * stride, x.value().data.begin() + end * stride);
  Tensor<T> out(std::move(shape), std::move(values));
  return make_result<T>(std::move(out), {x}, [begin, stride](Node<T>& n) {
    auto& buf = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) buf[begin * stride + i] += n.grad[i];
  });
}

/// x[B,D] * s[B,1], broadcasting s across each row.
template <typename T>
Var<T> scale_rows(const Var<T>& x, const Var<T>& s) {
  detail::require_rank(x.shape(), 2, "scale_rows");
  const int rows = x.dim(0), cols = x.dim(1);
  if (s.shape() != Shape{rows, 1}) throw ConfigError("scale_rows: scale shape " + shape_str(s.shape()));
  Tensor<T> out = x.value();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out.at2(r, c) *= s.value()[r];
  return make_result<T>(std::move(out), {x, s}, [rows, cols](Node<T>& n) {
    const auto& xv = n.inputs[0]->value;
    const auto& sv = n.inputs[1]->value;
    if (n.inputs[0]->requires_grad) {
      auto& buf = n.inputs[0]->grad_buffer();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * cols + c;
          buf[i] += n.grad[i] * sv[r];
        }
    }
    if (n.inputs[1]->requires_grad) {
      auto& buf = n.inputs[1]->grad_buffer();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * cols + c;
          buf[r] += n.grad[i] * xv[i];
        }
    }
  });
}

/// out[b] = sum_i weights[b,i] * items[b*N+i] for weights [B,N], items [B*N,D].
template <typename T>
Var<T> weighted_sum(const Var<T>& weights, const Var<T>& items) {
  detail::require_rank(weights.shape(), 2, "weighted_sum weights");
  detail::require_rank(items.shape(), 2, "weighted_sum items");
  const int batch = weights.dim(0), count = weights.dim(1), width = items.dim(1);
  if (items.dim(0) != batch * count)
    throw ConfigError("weighted_sum: items " + shape_str(items.shape()) + " for weights " +
                      shape_str(weights.shape()));
  Tensor<T> out({batch, width});
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < count; ++i) {
      const T w = weights.value().at2(b, i);
      for (int d = 0; d < width; ++d) out.at2(b, d) += w * items.value().at2(b * count + i, d);
    }
  return make_result<T>(std::move(out), {weights, items}, [batch, count, width](Node<T>& n) {
    const auto& wv = n.inputs[0]->value;
    const auto& iv = n.inputs[1]->value;
    const bool gw = n.inputs[0]->requires_grad, gi = n.inputs[1]->requires_grad;
    std::vector<T>* dw = gw ? &n.inputs[0]->grad_buffer() : nullptr;
    std::vector<T>* di = gi ? &n.inputs[1]->grad_buffer() : nullptr;
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < count; ++i) {
        const std::size_t row = static_cast<std::size_t>(b * count + i) * width;
        T acc = T(0);
        for (int d = 0; d < width; ++d) {
          const T g = n.grad[static_cast<std::size_t>(b) * width + d];
          acc += g * iv.data[row + d];
          if (di) (*di)[row + d] += g * wv.at2(b, i);
        }
        if (dw) (*dw)[static_cast<std::size_t>(b) * count + i] += acc;
      }
  });
}

/// kZero pads with zeros; kEdge repeats the border pixel.
enum class PadMode { kZero, kEdge };

/// Cross-correlation over x[B,C,H,W] (or [C,H,W]) with weight [O,C,k,k] and bias [O].
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, int stride = 1, int padding = 0,
              PadMode pad_mode = PadMode::kZero) {
  Var<T> x = input;
  const bool unbatched = input.shape().size() == 3;
  if (unbatched) x = reshape(input, Shape{1, input.dim(0), input.dim(1), input.dim(2)});
  detail::require_rank(x.shape(), 4, "conv2d input");
  detail::require_rank(weight.shape(), 4, "conv2d weight");
  const int batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  const int out_ch = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != channels)
    throw ConfigError("conv2d: input has " + std::to_string(channels) + " channels, weight expects " +
                      shape_str(weight.shape()));
  if (bias.shape() != Shape{out_ch}) throw ConfigError("conv2d: bias " + shape_str(bias.shape()));
  if (stride < 1 || padding < 0) throw ConfigError("conv2d: stride must be >= 1 and padding >= 0");
  const int out_h = (height + 2 * padding - kh) / stride + 1;
  const int out_w = (width + 2 * padding - kw) / stride + 1;
  if (height + 2 * padding < kh || width + 2 * padding < kw || out_h < 1 || out_w < 1)
    throw ConfigError("conv2d: kernel " + shape_str(weight.shape()) + " does not fit input " + shape_str(x.shape()) +
                      " with padding " + std::to_string(padding));

  const bool edge = pad_mode == PadMode::kEdge;
  // Source index along one axis, or -1 for a zero-padded tap.
  auto source = [edge](int i, int n) { return i >= 0 && i < n ? i : edge ? std::clamp(i, 0, n - 1) : -1; };
  const int patch = channels * kh * kw;
  const int plane = out_h * out_w;
  const int ncols = batch * plane;
  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(patch) * ncols, T(0));
  const auto& xv = x.value().data;
  for (int c = 0; c < channels; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        T* row = cols->data() + static_cast<std::size_t>((c * kh + ki) * kw + kj) * ncols;
        for (int b = 0; b < batch; ++b) {
          const T* src = xv.data() + (static_cast<std::size_t>(b) * channels + c) * height * width;
          for (int oh = 0; oh < out_h; ++oh) {
            const int ih = source(oh * stride - padding + ki, height);
            T* dst = row + b * plane + oh * out_w;
            if (ih < 0) continue;
            for (int ow = 0; ow < out_w; ++ow) {
              const int iw = source(ow * stride - padding + kj, width);
              if (iw >= 0) dst[ow] = src[ih * width + iw];
            }
          }
        }
      }

  detail::RowMat<T> y(out_ch, ncols);
  detail::ConstMatMap<T> wm(weight.value().data.data(), out_ch, patch);
  detail::ConstMatMap<T> cm(cols->data(), patch, ncols);
  y.noalias() = wm * cm;

  Tensor<T> out({batch, out_ch, out_h, out_w});
  for (int b = 0; b < batch; ++b)
    for (int o = 0; o < out_ch; ++o) {
      T* dst = out.data.data() + (static_cast<std::size_t>(b) * out_ch + o) * plane;
      const T* src = y.data() + static_cast<std::size_t>(o) * ncols + b * plane;
      const T bo = bias.value()[o];
      for (int i = 0; i < plane; ++i) dst[i] = src[i] + bo;
    }

  if (!grad_enabled()) cols.reset();
  Var<T> result = make_result<T>(
      std::move(out), {x, weight, bias},
      [=](Node<T>& n) {
        detail::RowMat<T> g(out_ch, ncols);
        for (int b = 0; b < batch; ++b)
          for (int o = 0; o < out_ch; ++o) {
            const T* src = n.grad.data() + (static_cast<std::size_t>(b) * out_ch + o) * plane;
            T* dst = g.data() + static_cast<std::size_t>(o) * ncols + b * plane;
            std::copy(src, src + plane, dst);
          }
        auto& xn = *n.inputs[0];
        auto& wn = *n.inputs[1];
        auto& bn = *n.inputs[2];
        if (bn.requires_grad) {
          auto& db = bn.grad_buffer();
          for (int o = 0; o < out_ch; ++o) db[o] += g.row(o).sum();
        }
        if (wn.requires_grad) {
          detail::MatMap<T> dw(wn.grad_buffer().data(), out_ch, patch);
          detail::ConstMatMap<T> cm(cols->data(), patch, ncols);
          dw.noalias() += g * cm.transpose();
        }
        if (xn.requires_grad) {
          detail::ConstMatMap<T> wm(wn.value.data.data(), out_ch, patch);
          detail::RowMat<T> dcols = wm.transpose() * g;
          auto& dx = xn.grad_buffer();
          for (int c = 0; c < channels; ++c)
            for (int ki = 0; ki < kh; ++ki)
              for (int kj = 0; kj < kw; ++kj) {
                const T* row = dcols.data() + static_cast<std::size_t>((c * kh + ki) * kw + kj) * ncols;
                for (int b = 0; b < batch; ++b) {
                  T* dst = dx.data() + (static_cast<std::size_t>(b) * channels + c) * height * width;
                  for (int oh = 0; oh < out_h; ++oh) {
                    const int ih = source(oh * stride - padding + ki, height);
                    if (ih < 0) continue;
                    const T* src = row + b * plane + oh * out_w;
                    for (int ow = 0; ow < out_w; ++ow) {
                      const int iw = source(ow * stride - padding + kj, width);
                      if (iw >= 0) dst[ih * width + iw] += src[ow];
                    }
                  }
                }
              }
        }
      });
  if (unbatched) return reshape(result, Shape{out_ch, out_h, out_w});
  return result;
}

/// Non-overlapping max pooling with a square window; trailing rows/cols dropped.
template <typename T>
Var<T> maxpool2d(const Var<T>& x, int window = 2) {
  detail::require_rank(x.shape(), 4, "maxpool2d");
  const int batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  const int out_h = height / window, out_w = width / window;
  if (out_h < 1 || out_w < 1) throw ConfigError("maxpool2d: input " + shape_str(x.shape()) + " smaller than window");
  Tensor<T> out({batch, channels, out_h, out_w});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto& xv = x.value().data;
  std::size_t k = 0;
  for (int bc = 0; bc < batch * channels; ++bc) {
    const std::size_t base = static_cast<std::size_t>(bc) * height * width;
    for (int oh = 0; oh < out_h; ++oh)
      for (int ow = 0; ow < out_w; ++ow, ++k) {
        std::size_t best = base + static_cast<std::size_t>(oh * window) * width + ow * window;
        for (int i = 0; i < window; ++i)
          for (int j = 0; j < window; ++j) {
            const std::size_t idx = base + static_cast<std::size_t>(oh * window + i) * width + ow * window + j;
            if (xv[idx] > xv[best]) best = idx;
          }
        out.data[k] = xv[best];
        (*argmax)[k] = best;
      }
  }
  return make_result<T>(std::move(out), {x}, [argmax](Node<T>& n) {
    auto& buf = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) buf[(*argmax)[i]] += n.grad[i];
  });
}

/// Per-channel softmax over an h x w map, reduced to expected (row, col) in
/// map pixel units. Input [B,C,h,w] or [C,h,w]; output [B,C,2] or [C,2].
template <typename T>
Var<T> spatial_softmax(const Var<T>& input, T temperature = T(1)) {
  const bool unbatched = input.shape().size() == 3;
  Var<T> x = unbatched ? reshape(input, Shape{1, input.dim(0), input.dim(1), input.dim(2)}) : input;
  detail::require_rank(x.shape(), 4, "spatial_softmax");
  if (!(temperature > T(0))) throw ConfigError("spatial_softmax: temperature must be positive");
  const int batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  if (height < 1 || width < 1) throw ConfigError("spatial_softmax: empty map " + shape_str(x.shape()));
  const int plane = height * width;
  auto probs = std::make_shared<std::vector<T>>(x.size());
  Tensor<T> out({batch, channels, 2});
  const auto& xv = x.value().data;
  for (int bc = 0; bc < batch * channels; ++bc) {
    const T* f = xv.data() + static_cast<std::size_t>(bc) * plane;
    T* p = probs->data() + static_cast<std::size_t>(bc) * plane;
    T mx = -std::numeric_limits<T>::infinity();
    for (int i = 0; i < plane; ++i) {
      if (!std::isfinite(f[i])) throw NumericError("spatial_softmax: non-finite feature value");
      mx = std::max(mx, f[i]);
    }
    T total = T(0);
    for (int i = 0; i < plane; ++i) total += (p[i] = std::exp((f[i] - mx) / temperature));
    T row = T(0), col = T(0);
    for (int i = 0; i < plane; ++i) {
      p[i] /= total;
      row += p[i] * static_cast<T>(i / width);
      col += p[i] * static_cast<T>(i % width);
    }
    out.data[static_cast<std::size_t>(bc) * 2] = row;
    out.data[static_cast<std::size_t>(bc) * 2 + 1] = col;
  }
  Var<T> result = make_result<T>(std::move(out), {x}, [=](Node<T>& n) {
    auto& buf = n.inputs[0]->grad_buffer();
    for (int bc = 0; bc < batch * channels; ++bc) {
      const T* p = probs->data() + static_cast<std::size_t>(bc) * plane;
      const T grow = n.grad[static_cast<std::size_t>(bc) * 2];
      const T gcol = n.grad[static_cast<std::size_t>(bc) * 2 + 1];
      const T row = n.value.data[static_cast<std::size_t>(bc) * 2];
      const T col = n.value.data[static_cast<std::size_t>(bc) * 2 + 1];
      T* dst = buf.data() + static_cast<std::size_t>(bc) * plane;
      for (int i = 0; i < plane; ++i)
        dst[i] += p[i] * (grow * (static_cast<T>(i / width) - row) + gcol * (static_cast<T>(i % width) - col)) /
                  temperature;
    }
  });
  if (unbatched) return reshape(result, Shape{channels, 2});
  return result;
}

/// Mean over the spatial plane: [B,C,h,w] -> [B,C].
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  detail::require_rank(x.shape(), 4, "global_avg_pool");
  const int batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> out({batch, channels});
  for (int bc = 0; bc < batch * channels; ++bc) {
    T total = T(0);
    for (int i = 0; i < plane; ++i) total += x.value().data[static_cast<std::size_t>(bc) * plane + i];
    out.data[bc] = total / static_cast<T>(plane);
  }
  return make_result<T>(std::move(out), {x}, [plane](Node<T>& n) {
    auto& buf = n.inputs[0]->grad_buffer();
    for (std::size_t bc = 0; bc < n.grad.size(); ++bc)
      for (int i = 0; i < plane; ++i) buf[bc * plane + i] += n.grad[bc] / static_cast<T>(plane);
  });
}

/// Max over the spatial plane: [B,C,h,w] -> [B,C]. Ties resolve to the first index.
template <typename T>
Var<T> global_max_pool(const Var<T>& x) {
  detail::require_rank(x.shape(), 4, "global_max_pool");
  const int batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> out({batch, channels});
  auto argmax = std::make_shared<std::vector<std::size_t>>(static_cast<std::size_t>(batch) * channels);
  for (int bc = 0; bc < batch * channels; ++bc) {
    const std::size_t base = static_cast<std::size_t>(bc) * plane;
    std::size_t best = base;
    for (int i = 1; i < plane; ++i)
      if (x.value().data[base + i] > x.value().data[best]) best = base + i;
    out.data[bc] = x.value().data[best];
    (*argmax)[bc] = best;
  }
  return make_result<T>(std::move(out), {x}, [argmax](Node<T>& n) {
    auto& buf = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n.grad.size(); ++i) buf[(*argmax)[i]] += n.grad[i];
  });
}

}  // namespace han::diff
