#pragma once

#include <string>
#include <vector>

#include "han/core/binary_io.hpp"
#include "han/diff/nn.hpp"

namespace han::diff {

inline constexpr std::string_view kCheckpointMagic = "HANCKPT1";

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

/// magic | u32 count | count x (str name | u32 rank | u32 dims... | f32 data...)
template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const ParameterSet<T>& params) {
  io::ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params.items()) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.var.shape().size()));
    for (int d : p.var.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (T v : p.var.value().data) w.f32(static_cast<float>(v));
  }
  return w.take();
}

inline std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  if (r.raw(kCheckpointMagic.size()) != kCheckpointMagic) throw FormatError("not a HANCKPT1 checkpoint");
  const std::uint32_t count = r.u32();
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor nt;
    nt.name = r.str();
    const std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(r.u32()));
    nt.tensor = Tensor<float>(shape);
    for (auto& v : nt.tensor.data) v = r.f32();
    out.push_back(std::move(nt));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint records");
  return out;
}

/// Loads values by name; every parameter must be present with a matching shape.
template <typename T>
void load_checkpoint(ParameterSet<T>& params, const std::vector<NamedTensor>& records) {
  for (auto& p : params.items()) {
    const NamedTensor* found = nullptr;
    for (const auto& rec : records)
      if (rec.name == p.name) found = &rec;
    if (!found) throw FormatError("checkpoint lacks parameter " + p.name);
    if (found->tensor.shape != p.var.shape())
      throw FormatError("checkpoint shape " + shape_str(found->tensor.shape) + " for " + p.name + ", model has " +
                        shape_str(p.var.shape()));
    auto& dst = p.var.mutable_value().data;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(found->tensor.data[i]);
  }
  if (records.size() != params.size()) throw FormatError("checkpoint parameter count differs from model");
}

template <typename T>
void save_checkpoint_file(const ParameterSet<T>& params, const std::string& path) {
  io::write_file(path, encode_checkpoint(params));
}

template <typename T>
void load_checkpoint_file(ParameterSet<T>& params, const std::string& path) {
  load_checkpoint(params, decode_checkpoint(io::read_file(path)));
}

}  // namespace han::diff
