#pragma once

#include <fstream>
#include <string>

#include "han/diff/checkpoint.hpp"
#include "han/policy/policy.hpp"
#include "han/sim/scene_json.hpp"

namespace han::policy {

/// A model is a HANCKPT1 parameter file plus `<path>.json` holding the
/// policy config and camera needed to rebuild the network.
inline std::string model_meta_path(const std::string& ckpt) { return ckpt + ".json"; }

template <typename T>
void save_model(const std::string& path, const Policy<T>& p, const nlohmann::json& extra = nlohmann::json::object()) {
  diff::save_checkpoint_file(p.params(), path);
  nlohmann::json meta = extra;
  meta["policy"] = to_json(p.config());
  meta["camera"] = sim::to_json(p.camera());
  std::ofstream out(model_meta_path(path));
  if (!out) throw FormatError("cannot write " + model_meta_path(path));
  out << meta.dump(2) << "\n";
}

inline nlohmann::json read_model_meta(const std::string& path) {
  std::ifstream in(model_meta_path(path));
  if (!in) throw FormatError("missing model metadata " + model_meta_path(path));
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed model metadata: " + std::string(e.what()));
  }
}

template <typename T>
Policy<T> load_model(const std::string& path) {
  const auto meta = read_model_meta(path);
  Policy<T> p(policy_config_from_json(meta.at("policy")), sim::camera_from_json(meta.at("camera")));
  diff::load_checkpoint_file(p.params(), path);
  return p;
}

}  // namespace han::policy
