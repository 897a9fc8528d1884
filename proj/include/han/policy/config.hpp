#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "han/core/error.hpp"

namespace han::policy {

enum class Variant { kHan, kMlpAtn, kNoRoi, kNoCon, kBcImage, kBcStates };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::kHan: return "han";
    case Variant::kMlpAtn: return "mlp_atn";
    case Variant::kNoRoi: return "no_roi";
    case Variant::kNoCon: return "no_con";
    case Variant::kBcImage: return "bc_image";
    case Variant::kBcStates: return "bc_states";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (auto v : {Variant::kHan, Variant::kMlpAtn, Variant::kNoRoi, Variant::kNoCon, Variant::kBcImage,
                 Variant::kBcStates})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown variant '" + s + "'; valid variants: han, mlp_atn, no_roi, no_con, bc_image, bc_states");
}

/// Variants that compute keypoints and confidences over random regions.
inline bool uses_regions(Variant v) { return v == Variant::kHan || v == Variant::kMlpAtn || v == Variant::kNoCon; }
/// Variants whose action is k * (x_kp + x_offset - x_ee).
inline bool composes_action(Variant v) { return v == Variant::kHan || v == Variant::kNoCon || v == Variant::kNoRoi; }

struct PolicyConfig {
  Variant variant = Variant::kHan;
  int regions = 16;
  int crop_h = 20, crop_w = 26;
  int image_h = 60, image_w = 80;
  double offset_bound = 0.1;
  // Conv widths; a 2x2 max pool follows each of the first `pooled_layers` layers.
  std::vector<int> backbone{8, 16, 32, 32};
  int pooled_layers = 2;
  int switch_hidden = 32;
  std::vector<int> head_hidden{128, 64};
  int bc_keypoints = 64;
  int max_objects = 3;            // bc_states pose slots
  double position_scale = 10.0;   // meters -> network input units
  std::uint64_t seed = 0;

  int feature_width() const { return 2 * backbone.back(); }

  void validate() const {
    if (regions < 1) throw ConfigError("regions must be >= 1");
    if (!(crop_h < image_h && crop_w < image_w)) throw ConfigError("crop must be smaller than the image");
    if (crop_h < 1 || crop_w < 1) throw ConfigError("crop size must be positive");
    if (!(offset_bound > 0)) throw ConfigError("offset bound must be positive");
    if (backbone.empty()) throw ConfigError("backbone needs at least one layer");
    if (pooled_layers < 0 || pooled_layers > static_cast<int>(backbone.size()))
      throw ConfigError("pooled_layers out of range");
    const int down = 1 << pooled_layers;
    if (crop_h / down < 1 || crop_w / down < 1) throw ConfigError("crop too small for the backbone pooling");
    if (head_hidden.empty()) throw ConfigError("head needs at least one hidden layer");
    if (bc_keypoints < 1 || max_objects < 1) throw ConfigError("bc sizes must be positive");
  }
};

inline nlohmann::json to_json(const PolicyConfig& c) {
  return {{"variant", to_string(c.variant)}, {"regions", c.regions},
          {"crop", {c.crop_h, c.crop_w}},    {"image", {c.image_h, c.image_w}},
          {"offset_bound", c.offset_bound},  {"backbone", c.backbone},
          {"pooled_layers", c.pooled_layers}, {"switch_hidden", c.switch_hidden},
          {"head_hidden", c.head_hidden},    {"bc_keypoints", c.bc_keypoints},
          {"max_objects", c.max_objects},    {"position_scale", c.position_scale},
          {"seed", c.seed}};
}

/// Missing keys keep their defaults.
inline PolicyConfig policy_config_from_json(const nlohmann::json& j) {
  PolicyConfig c;
  try {
    if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
    if (j.contains("regions")) c.regions = j["regions"].get<int>();
    if (j.contains("crop")) {
      c.crop_h = j["crop"].at(0).get<int>();
      c.crop_w = j["crop"].at(1).get<int>();
    }
    if (j.contains("image")) {
      c.image_h = j["image"].at(0).get<int>();
      c.image_w = j["image"].at(1).get<int>();
    }
    if (j.contains("offset_bound")) c.offset_bound = j["offset_bound"].get<double>();
    if (j.contains("backbone")) c.backbone = j["backbone"].get<std::vector<int>>();
    if (j.contains("pooled_layers")) c.pooled_layers = j["pooled_layers"].get<int>();
    if (j.contains("switch_hidden")) c.switch_hidden = j["switch_hidden"].get<int>();
    if (j.contains("head_hidden")) c.head_hidden = j["head_hidden"].get<std::vector<int>>();
    if (j.contains("bc_keypoints")) c.bc_keypoints = j["bc_keypoints"].get<int>();
    if (j.contains("max_objects")) c.max_objects = j["max_objects"].get<int>();
    if (j.contains("position_scale")) c.position_scale = j["position_scale"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad policy config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace han::policy
