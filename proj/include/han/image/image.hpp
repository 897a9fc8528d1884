#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "han/core/error.hpp"

namespace han::img {

using Rgb = std::array<std::uint8_t, 3>;

/// Interleaved 8-bit RGB, row-major.
struct RgbImage {
  int height = 0, width = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int h, int w, Rgb fill = {0, 0, 0}) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3) {
    for (std::size_t i = 0; i < pixels.size(); i += 3) {
      pixels[i] = fill[0];
      pixels[i + 1] = fill[1];
      pixels[i + 2] = fill[2];
    }
  }

  Rgb at(int r, int c) const {
    const std::size_t i = (static_cast<std::size_t>(r) * width + c) * 3;
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }
  void set(int r, int c, Rgb color) {
    const std::size_t i = (static_cast<std::size_t>(r) * width + c) * 3;
    pixels[i] = color[0];
    pixels[i + 1] = color[1];
    pixels[i + 2] = color[2];
  }
  bool contains(int r, int c) const { return r >= 0 && c >= 0 && r < height && c < width; }
  bool operator==(const RgbImage&) const = default;
};

/// Metric depth (camera-frame Z), row-major.
struct DepthImage {
  int height = 0, width = 0;
  std::vector<float> meters;

  DepthImage() = default;
  DepthImage(int h, int w, float fill = 0.f) : height(h), width(w), meters(static_cast<std::size_t>(h) * w, fill) {}

  float at(int r, int c) const { return meters[static_cast<std::size_t>(r) * width + c]; }
  float& at(int r, int c) { return meters[static_cast<std::size_t>(r) * width + c]; }
  bool operator==(const DepthImage&) const = default;
};

/// Depth quantized to whole millimeters, as stored in datasets.
struct DepthMm {
  int height = 0, width = 0;
  std::vector<std::uint16_t> mm;

  double meters_at(int r, int c) const { return mm[static_cast<std::size_t>(r) * width + c] / 1000.0; }
  bool operator==(const DepthMm&) const = default;
};

inline DepthMm quantize_depth(const DepthImage& depth) {
  DepthMm out{depth.height, depth.width, std::vector<std::uint16_t>(depth.meters.size())};
  for (std::size_t i = 0; i < depth.meters.size(); ++i) {
    const double mm = std::round(static_cast<double>(depth.meters[i]) * 1000.0);
    if (!(mm >= 1.0) || mm > 65535.0) throw NumericError("depth out of 16-bit millimeter range");
    out.mm[i] = static_cast<std::uint16_t>(mm);
  }
  return out;
}

}  // namespace han::img
