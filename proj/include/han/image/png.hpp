#pragma once

#include <csetjmp>
#include <cstring>
#include <string>
#include <vector>

#include <png.h>

#include "han/core/binary_io.hpp"
#include "han/image/image.hpp"

namespace han::img {

namespace detail {

struct PngReadCursor {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos;
};

inline void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

inline void png_read_from_cursor(png_structp png, png_bytep data, png_size_t length) {
  auto* cur = static_cast<PngReadCursor*>(png_get_io_ptr(png));
  if (cur->size - cur->pos < length) png_error(png, "truncated PNG");
  std::memcpy(data, cur->data + cur->pos, length);
  cur->pos += length;
}

inline void png_error_to_longjmp(png_structp png, png_const_charp) { std::longjmp(png_jmpbuf(png), 1); }

// bit_depth 8 with 3 channels, or 16 with 1 channel (host-order samples).
inline std::vector<std::uint8_t> encode(int height, int width, int channels, int bit_depth, const void* samples) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw FormatError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("PNG encode failed");
  }
  png_set_write_fn(png, &out, png_write_to_vector, nullptr);
  png_set_IHDR(png, info, width, height, bit_depth, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);
  const std::size_t row_bytes = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
  const auto* base = static_cast<const std::uint8_t*>(samples);
  for (int r = 0; r < height; ++r) png_write_row(png, const_cast<png_bytep>(base + r * row_bytes));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline void decode(const std::vector<std::uint8_t>& bytes, int channels, int bit_depth, int& height, int& width,
                   std::vector<std::uint8_t>& samples) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8)) throw FormatError("not a PNG stream");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw FormatError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("PNG decode failed");
  }
  PngReadCursor cursor{bytes.data(), bytes.size(), 0};
  png_set_read_fn(png, &cursor, png_read_from_cursor);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int expected_color = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  if (color != expected_color || depth != bit_depth) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("unexpected PNG color type or bit depth");
  }
  if (bit_depth == 16) png_set_swap(png);
  height = static_cast<int>(png_get_image_height(png, info));
  width = static_cast<int>(png_get_image_width(png, info));
  const std::size_t row_bytes = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
  samples.assign(row_bytes * height, 0);
  for (int r = 0; r < height; ++r) png_read_row(png, samples.data() + r * row_bytes, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  return detail::encode(image.height, image.width, 3, 8, image.pixels.data());
}

inline RgbImage decode_png_rgb(const std::vector<std::uint8_t>& bytes) {
  RgbImage out;
  detail::decode(bytes, 3, 8, out.height, out.width, out.pixels);
  return out;
}

/// 16-bit grayscale PNG of millimeter depth.
inline std::vector<std::uint8_t> encode_png(const DepthMm& depth) {
  return detail::encode(depth.height, depth.width, 1, 16, depth.mm.data());
}

inline DepthMm decode_png_depth(const std::vector<std::uint8_t>& bytes) {
  DepthMm out;
  std::vector<std::uint8_t> raw;
  detail::decode(bytes, 1, 16, out.height, out.width, raw);
  out.mm.resize(raw.size() / 2);
  std::memcpy(out.mm.data(), raw.data(), raw.size());
  return out;
}

inline void write_png(const std::string& path, const RgbImage& image) { io::write_file(path, encode_png(image)); }
inline void write_png(const std::string& path, const DepthMm& depth) { io::write_file(path, encode_png(depth)); }

}  // namespace han::img
