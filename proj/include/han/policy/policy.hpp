#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "han/diff/nn.hpp"
#include "han/geometry/lift.hpp"
#include "han/image/image.hpp"
#include "han/policy/output.hpp"

namespace han::policy {

using diff::Var;

/// One observation as the policy sees it.
struct PolicyInput {
  const img::RgbImage* rgb = nullptr;
  const img::DepthMm* depth = nullptr;
  Eigen::Vector3d x_ee = Eigen::Vector3d::Zero();
  bool fingers_closed = false;
  std::vector<Eigen::Vector3d> object_positions;  // bc_states only
};

template <typename T>
struct ForwardResult {
  Var<T> action;  // [B,4]
  std::vector<PolicyOutput> outputs;
};

template <typename T>
struct ActionTarget {
  Var<T> offset;  // [B,3]
  Var<T> gain;    // [B,1]
  Var<T> grip;    // [B,1]
};

/// Splits raw head outputs [B,5] into offset, gain and grip logit. With
/// `squash` the offset is bound*tanh and the gain a sigmoid.
template <typename T>
ActionTarget<T> constrain_head(const Var<T>& raw, double bound, bool squash) {
  if (raw.shape().size() != 2 || raw.dim(1) != 5) throw ConfigError("action head must output [B,5]");
  ActionTarget<T> out;
  Var<T> off = diff::slice_cols(raw, 0, 3), gain = diff::slice_cols(raw, 3, 4);
  out.grip = diff::slice_cols(raw, 4, 5);
  if (squash) {
    off = diff::tanh(off);
    off = diff::scale(off, static_cast<T>(bound));
    gain = diff::sigmoid(gain);
  }
  out.offset = off;
  out.gain = gain;
  return out;
}

/// a[0:3] = k * (x_kp + x_offset - x_ee), a[3] = grip logit.
template <typename T>
Var<T> compose_action(const Var<T>& x_kp, const Var<T>& x_offset, const Var<T>& k, const Var<T>& x_ee,
                      const Var<T>& grip) {
  const Var<T> to_target = diff::sub(diff::add(x_kp, x_offset), x_ee);
  return diff::concat_cols<T>({diff::scale_rows(to_target, k), grip});
}

/// Softmax over region scores [B,N], then the confidence-weighted candidate [B,3].
template <typename T>
std::pair<Var<T>, Var<T>> switch_attention(const Var<T>& scores, const Var<T>& candidates) {
  const Var<T> c = diff::softmax_rows(scores);
  return {c, diff::weighted_sum(c, candidates)};
}

template <typename T>
class Policy {
 public:
  Policy(const PolicyConfig& cfg, const geo::CameraModel& cam) : cfg_(cfg), cam_(cam) {
    cfg_.validate();
    cam_.validate();
    if (cam_.height != cfg_.image_h || cam_.width != cfg_.image_w)
      throw ConfigError("camera resolution does not match the policy image size");
    std::mt19937_64 rng(cfg_.seed);
    const Variant v = cfg_.variant;
    const int F = cfg_.feature_width();
    if (v != Variant::kBcStates) {
      int in = 3;
      for (std::size_t i = 0; i < cfg_.backbone.size(); ++i) {
        backbone_.emplace_back(params_, "backbone." + std::to_string(i), in, cfg_.backbone[i], 3, 1, 1, rng);
        in = cfg_.backbone[i];
      }
      const int kp_channels = v == Variant::kBcImage ? cfg_.bc_keypoints : 1;
      keypoint_head_ = diff::Conv2d<T>(params_, "keypoint_head", in, kp_channels, 1, 1, 0, rng);
    }
    if (uses_regions(v)) switch_ = diff::Mlp<T>(params_, "switch", {F, cfg_.switch_hidden, 1}, rng);
    int head_in = 0, head_out = 4;
    switch (v) {
      case Variant::kHan:
      case Variant::kNoCon:
      case Variant::kNoRoi:
        head_in = 5 + 2 * F;
        head_out = 5;
        break;
      case Variant::kMlpAtn: head_in = 5 + 2 * F; break;
      case Variant::kBcImage: head_in = 2 * cfg_.bc_keypoints + 4; break;
      case Variant::kBcStates: head_in = 3 * cfg_.max_objects + 4; break;
    }
    std::vector<int> widths{head_in};
    widths.insert(widths.end(), cfg_.head_hidden.begin(), cfg_.head_hidden.end());
    widths.push_back(head_out);
    head_ = diff::Mlp<T>(params_, "head", widths, rng);
  }

  const PolicyConfig& config() const { return cfg_; }
  const geo::CameraModel& camera() const { return cam_; }
  diff::ParameterSet<T>& params() { return params_; }
  const diff::ParameterSet<T>& params() const { return params_; }

  /// Draws fresh region proposals for every sample from `rng`.
  ForwardResult<T> forward(const std::vector<PolicyInput>& batch, std::mt19937_64& rng) const {
    std::vector<std::vector<RegionProposal>> regions;
    if (uses_regions(cfg_.variant))
      for (std::size_t b = 0; b < batch.size(); ++b) regions.push_back(propose_regions(rng, cfg_));
    return forward(batch, regions);
  }

  ForwardResult<T> forward(const std::vector<PolicyInput>& batch,
                           const std::vector<std::vector<RegionProposal>>& regions) const {
    if (batch.empty()) throw UsageError("forward on an empty batch");
    for (const auto& in : batch) check_input(in);
    switch (cfg_.variant) {
      case Variant::kHan:
      case Variant::kNoCon:
      case Variant::kMlpAtn: return forward_regions(batch, regions);
      case Variant::kNoRoi: return forward_no_roi(batch);
      case Variant::kBcImage: return forward_bc_image(batch);
      case Variant::kBcStates: return forward_bc_states(batch);
    }
    throw UsageError("unknown variant");
  }

  /// Single-observation inference without graph recording.
  PolicyOutput act(const PolicyInput& in, std::mt19937_64& rng) const {
    diff::NoGradGuard guard;
    return forward({in}, rng).outputs.front();
  }

  /// Pixel tensor [M,3,h,w] for crops of each sample, normalized to v/255 - 0.5.
  static diff::Tensor<T> crop_pixels(const std::vector<std::pair<const img::RgbImage*, RegionProposal>>& crops,
                                     int h, int w) {
    diff::Tensor<T> out({static_cast<int>(crops.size()), 3, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t m = 0; m < crops.size(); ++m) {
      const auto& [image, origin] = crops[m];
      if (origin.row < 0 || origin.col < 0 || origin.row + h > image->height || origin.col + w > image->width)
        throw ConfigError("region proposal outside the image");
      T* base = out.data.data() + m * 3 * plane;
      for (int r = 0; r < h; ++r) {
        const std::uint8_t* src = image->pixels.data() + (static_cast<std::size_t>(origin.row + r) * image->width + origin.col) * 3;
        for (int c = 0; c < w; ++c)
          for (int ch = 0; ch < 3; ++ch)
            base[ch * plane + static_cast<std::size_t>(r) * w + c] = static_cast<T>(src[c * 3 + ch] / 255.0 - 0.5);
      }
    }
    return out;
  }

  /// Shared conv stack: relu after each layer, 2x2 max pool after the first
  /// `pooled_layers`. Edge padding keeps constant inputs constant.
  Var<T> backbone(const Var<T>& x) const {
    Var<T> h = x;
    for (std::size_t i = 0; i < backbone_.size(); ++i) {
      h = diff::relu(diff::conv2d(h, backbone_[i].weight, backbone_[i].bias, 1, 1, diff::PadMode::kEdge));
      if (static_cast<int>(i) < cfg_.pooled_layers) h = diff::maxpool2d(h);
    }
    return h;
  }

  /// Region features: [global average, global max] per channel.
  static Var<T> pooled_features(const Var<T>& maps) {
    return diff::concat_cols<T>({diff::global_avg_pool(maps), diff::global_max_pool(maps)});
  }

  /// Single spatial-softmax keypoint per map, converted to global pixel
  /// coordinates of crops of size (h, w) placed at `origins`. Returns [M,2].
  Var<T> keypoints(const Var<T>& maps, const std::vector<RegionProposal>& origins, int h, int w) const {
    const Var<T> logits = keypoint_head_(maps);
    const int m = logits.dim(0), mh = logits.dim(2), mw = logits.dim(3);
    const Var<T> uv = diff::reshape(diff::spatial_softmax(logits, T(1)), diff::Shape{m, 2});
    const double sh = static_cast<double>(h) / mh, sw = static_cast<double>(w) / mw;
    std::vector<T> mult(2 * m), shift(2 * m);
    for (int i = 0; i < m; ++i) {
      mult[2 * i] = static_cast<T>(sh);
      mult[2 * i + 1] = static_cast<T>(sw);
      shift[2 * i] = static_cast<T>(0.5 * sh - 0.5 + origins[i].row);
      shift[2 * i + 1] = static_cast<T>(0.5 * sw - 0.5 + origins[i].col);
    }
    return diff::affine(uv, std::move(mult), std::move(shift));
  }

 private:
  void check_input(const PolicyInput& in) const {
    if (cfg_.variant == Variant::kBcStates) {
      if (in.object_positions.empty()) throw UsageError("bc_states needs ground-truth object positions");
      if (static_cast<int>(in.object_positions.size()) > cfg_.max_objects)
        throw UsageError("more objects than bc_states pose slots");
      return;
    }
    if (!in.rgb || !in.depth) throw UsageError("observation is missing rgb or depth");
    if (in.rgb->height != cfg_.image_h || in.rgb->width != cfg_.image_w || in.depth->height != cfg_.image_h ||
        in.depth->width != cfg_.image_w)
      throw UsageError("observation size does not match the policy config");
    if (!in.x_ee.allFinite()) throw NumericError("non-finite x_ee");
  }

  // Nearest-pixel depth per keypoint; gradients do not flow through it.
  std::vector<double> lookup_depth(const Var<T>& uv, const std::vector<const img::DepthMm*>& depth_of_row,
                                   std::vector<bool>& background) const {
    const int m = uv.dim(0);
    std::vector<double> d(m);
    background.assign(m, false);
    for (int i = 0; i < m; ++i) {
      const auto* depth = depth_of_row[i];
      const int r = std::clamp(static_cast<int>(std::lround(uv.value().at2(i, 0))), 0, depth->height - 1);
      const int c = std::clamp(static_cast<int>(std::lround(uv.value().at2(i, 1))), 0, depth->width - 1);
      d[i] = depth->meters_at(r, c);
      background[i] = d[i] >= 9.999;
    }
    return d;
  }

  Var<T> ee_tensor(const std::vector<PolicyInput>& batch) const {
    diff::Tensor<T> t({static_cast<int>(batch.size()), 3});
    for (std::size_t b = 0; b < batch.size(); ++b)
      for (int j = 0; j < 3; ++j) t.data[b * 3 + j] = static_cast<T>(batch[b].x_ee[j]);
    return diff::constant(std::move(t));
  }

  // [x_ee.z * scale, finger state] per sample.
  Var<T> proprio_tensor(const std::vector<PolicyInput>& batch) const {
    diff::Tensor<T> t({static_cast<int>(batch.size()), 2});
    for (std::size_t b = 0; b < batch.size(); ++b) {
      t.data[b * 2] = static_cast<T>(batch[b].x_ee.z() * cfg_.position_scale);
      t.data[b * 2 + 1] = batch[b].fingers_closed ? T(1) : T(-1);
    }
    return diff::constant(std::move(t));
  }

  Var<T> scaled(const Var<T>& x) const { return diff::scale(x, static_cast<T>(cfg_.position_scale)); }

  // Head input shared by the keypoint variants.
  Var<T> keypoint_head_input(const Var<T>& x_kp, const Var<T>& x_ee, const std::vector<PolicyInput>& batch,
                             const Var<T>& grip_features, const Var<T>& roi_features) const {
    return diff::concat_cols<T>(
        {scaled(diff::sub(x_kp, x_ee)), proprio_tensor(batch), grip_features, roi_features});
  }

  // Head, constraints and composition; fills the per-sample outputs.
  Var<T> finish(const std::vector<PolicyInput>& batch, const Var<T>& head_in, const Var<T>& x_kp,
                const Var<T>& x_ee, std::vector<PolicyOutput>& outs) const {
    const Var<T> raw = head_(head_in);
    const int B = static_cast<int>(batch.size());
    if (cfg_.variant == Variant::kMlpAtn) {
      for (int b = 0; b < B; ++b) {
        for (int j = 0; j < 4; ++j) outs[b].action[j] = raw.value().at2(b, j);
        outs[b].grip_logit = raw.value().at2(b, 3);
        outs[b].x_kp = row3(x_kp, b);
      }
      return raw;
    }
    const auto t = constrain_head(raw, cfg_.offset_bound, cfg_.variant != Variant::kNoCon);
    const Var<T> action = compose_action(x_kp, t.offset, t.gain, x_ee, t.grip);
    for (int b = 0; b < B; ++b) {
      outs[b].x_kp = row3(x_kp, b);
      outs[b].x_offset = row3(t.offset, b);
      outs[b].k = t.gain.value().at2(b, 0);
      outs[b].x_target = *outs[b].x_kp + *outs[b].x_offset;
      outs[b].grip_logit = t.grip.value().at2(b, 0);
      for (int j = 0; j < 4; ++j) outs[b].action[j] = action.value().at2(b, j);
    }
    return action;
  }

  static Eigen::Vector3d row3(const Var<T>& x, int b) {
    return {static_cast<double>(x.value().at2(b, 0)), static_cast<double>(x.value().at2(b, 1)),
            static_cast<double>(x.value().at2(b, 2))};
  }

  ForwardResult<T> forward_regions(const std::vector<PolicyInput>& batch,
                                   const std::vector<std::vector<RegionProposal>>& regions) const {
    const int B = static_cast<int>(batch.size()), N = cfg_.regions;
    if (static_cast<int>(regions.size()) != B) throw UsageError("one region set per sample required");
    std::vector<std::pair<const img::RgbImage*, RegionProposal>> crops;
    std::vector<RegionProposal> origins;
    std::vector<const img::DepthMm*> depth_rows;
    for (int b = 0; b < B; ++b) {
      if (static_cast<int>(regions[b].size()) != N) throw UsageError("wrong number of region proposals");
      for (const auto& r : regions[b]) {
        crops.emplace_back(batch[b].rgb, r);
        origins.push_back(r);
        depth_rows.push_back(batch[b].depth);
      }
    }
    std::vector<RegionProposal> patches;
    for (int b = 0; b < B; ++b) {
      patches.push_back(gripper_patch(cam_, batch[b].x_ee, cfg_));
      crops.emplace_back(batch[b].rgb, patches.back());
    }
    // One conv pass over every region crop and gripper patch in the batch.
    const Var<T> maps = backbone(diff::constant(crop_pixels(crops, cfg_.crop_h, cfg_.crop_w)));
    const Var<T> features = pooled_features(maps);
    const Var<T> region_maps = diff::slice_rows(maps, 0, B * N);
    const Var<T> region_features = diff::slice_rows(features, 0, B * N);
    const Var<T> grip_features = diff::slice_rows(features, B * N, B * N + B);

    const Var<T> uv = keypoints(region_maps, origins, cfg_.crop_h, cfg_.crop_w);
    std::vector<bool> background;
    const auto depths = lookup_depth(uv, depth_rows, background);
    const Var<T> candidates = geo::lift_keypoints(uv, depths, cam_);

    const Var<T> scores = diff::reshape(switch_(region_features), diff::Shape{B, N});
    const auto [c, x_kp] = switch_attention(scores, candidates);
    const Var<T> roi_features = diff::weighted_sum(c, region_features);
    const Var<T> x_ee = ee_tensor(batch);

    ForwardResult<T> res;
    res.outputs.resize(B);
    for (int b = 0; b < B; ++b) {
      auto& o = res.outputs[b];
      o.regions = regions[b];
      o.gripper_patch = patches[b];
      for (int i = 0; i < N; ++i) {
        const int m = b * N + i;
        o.keypoints_px.push_back({uv.value().at2(m, 0), uv.value().at2(m, 1)});
        o.candidate_kps.push_back(row3(candidates, m));
        o.background.push_back(background[m]);
        o.confidences.push_back(c.value().at2(b, i));
      }
    }
    res.action = finish(batch, keypoint_head_input(x_kp, x_ee, batch, grip_features, roi_features), x_kp, x_ee,
                        res.outputs);
    return res;
  }

  ForwardResult<T> forward_no_roi(const std::vector<PolicyInput>& batch) const {
    const int B = static_cast<int>(batch.size());
    std::vector<std::pair<const img::RgbImage*, RegionProposal>> whole, patches;
    std::vector<RegionProposal> zero(B);
    std::vector<const img::DepthMm*> depth_rows;
    for (int b = 0; b < B; ++b) {
      whole.emplace_back(batch[b].rgb, RegionProposal{});
      patches.emplace_back(batch[b].rgb, gripper_patch(cam_, batch[b].x_ee, cfg_));
      depth_rows.push_back(batch[b].depth);
    }
    const Var<T> maps = backbone(diff::constant(crop_pixels(whole, cfg_.image_h, cfg_.image_w)));
    const Var<T> patch_maps = backbone(diff::constant(crop_pixels(patches, cfg_.crop_h, cfg_.crop_w)));
    const Var<T> uv = keypoints(maps, zero, cfg_.image_h, cfg_.image_w);
    std::vector<bool> background;
    const auto depths = lookup_depth(uv, depth_rows, background);
    const Var<T> x_kp = geo::lift_keypoints(uv, depths, cam_);
    const Var<T> x_ee = ee_tensor(batch);

    ForwardResult<T> res;
    res.outputs.resize(B);
    for (int b = 0; b < B; ++b) {
      auto& o = res.outputs[b];
      o.regions = {RegionProposal{}};
      o.gripper_patch = patches[b].second;
      o.keypoints_px.push_back({uv.value().at2(b, 0), uv.value().at2(b, 1)});
      o.candidate_kps.push_back(row3(x_kp, b));
      o.background.push_back(background[b]);
      o.confidences.push_back(1.0);
    }
    res.action = finish(batch, keypoint_head_input(x_kp, x_ee, batch, pooled_features(patch_maps), pooled_features(maps)),
                        x_kp, x_ee, res.outputs);
    return res;
  }

  ForwardResult<T> forward_bc_image(const std::vector<PolicyInput>& batch) const {
    const int B = static_cast<int>(batch.size()), K = cfg_.bc_keypoints;
    std::vector<std::pair<const img::RgbImage*, RegionProposal>> whole;
    for (int b = 0; b < B; ++b) whole.emplace_back(batch[b].rgb, RegionProposal{});
    const Var<T> maps = backbone(diff::constant(crop_pixels(whole, cfg_.image_h, cfg_.image_w)));
    const Var<T> logits = keypoint_head_(maps);
    const int mh = logits.dim(2), mw = logits.dim(3);
    // Expected (row, col) per channel rescaled to [-1, 1].
    const Var<T> kp = diff::reshape(diff::spatial_softmax(logits, T(1)), diff::Shape{B, 2 * K});
    std::vector<T> mult(kp.size()), shift(kp.size(), T(-1));
    for (std::size_t i = 0; i < kp.size(); ++i) {
      const int extent = i % 2 == 0 ? mh : mw;
      mult[i] = extent > 1 ? static_cast<T>(2.0 / (extent - 1)) : T(0);
      if (extent <= 1) shift[i] = T(0);
    }
    const Var<T> kp_norm = diff::affine(kp, std::move(mult), std::move(shift));
    const Var<T> head_in = diff::concat_cols<T>({kp_norm, scaled(ee_tensor(batch)), finger_tensor(batch)});
    return plain_head(batch, head_in);
  }

  ForwardResult<T> forward_bc_states(const std::vector<PolicyInput>& batch) const {
    const int B = static_cast<int>(batch.size()), S = cfg_.max_objects;
    diff::Tensor<T> poses({B, 3 * S});
    for (int b = 0; b < B; ++b)
      for (std::size_t o = 0; o < batch[b].object_positions.size(); ++o)
        for (int j = 0; j < 3; ++j)
          poses.data[static_cast<std::size_t>(b) * 3 * S + o * 3 + j] =
              static_cast<T>(batch[b].object_positions[o][j] * cfg_.position_scale);
    const Var<T> head_in =
        diff::concat_cols<T>({diff::constant(std::move(poses)), scaled(ee_tensor(batch)), finger_tensor(batch)});
    return plain_head(batch, head_in);
  }

  Var<T> finger_tensor(const std::vector<PolicyInput>& batch) const {
    diff::Tensor<T> t({static_cast<int>(batch.size()), 1});
    for (std::size_t b = 0; b < batch.size(); ++b) t.data[b] = batch[b].fingers_closed ? T(1) : T(-1);
    return diff::constant(std::move(t));
  }

  ForwardResult<T> plain_head(const std::vector<PolicyInput>& batch, const Var<T>& head_in) const {
    ForwardResult<T> res;
    res.action = head_(head_in);
    res.outputs.resize(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      for (int j = 0; j < 4; ++j) res.outputs[b].action[j] = res.action.value().at2(static_cast<int>(b), j);
      res.outputs[b].grip_logit = res.outputs[b].action[3];
    }
    return res;
  }

  PolicyConfig cfg_;
  geo::CameraModel cam_;
  diff::ParameterSet<T> params_;
  std::vector<diff::Conv2d<T>> backbone_;
  diff::Conv2d<T> keypoint_head_;
  diff::Mlp<T> switch_;
  diff::Mlp<T> head_;
};

}  // namespace han::policy
