#pragma once

#include <functional>

#include "han/diff/gradcheck.hpp"
#include "han/policy/policy.hpp"
#include "han/sim/task.hpp"
#include "han/train/loss.hpp"

namespace han::train {

/// One finite-difference check of the shared suite.
struct GradSuiteEntry {
  std::string name;
  diff::GradCheckResult result;
  bool every_param_has_grad = true;  // end-to-end cases only

  bool passed(double tol = 1e-4) const { return every_param_has_grad && result.passed(tol); }
};

struct OpGradCase {
  const char* name;
  std::function<diff::Var<double>(const std::vector<diff::Var<double>>&)> fn;
  std::vector<diff::Shape> shapes;
};

/// Scalar losses built from each differentiable op, small random shapes.
inline std::vector<OpGradCase> op_gradient_cases() {
  using namespace han::diff;
  return {
      {"add", [](auto& v) { return sum(mul(add(v[0], v[1]), v[0])); }, {{2, 3}, {2, 3}}},
      {"sub", [](auto& v) { return sum(mul(sub(v[0], v[1]), v[1])); }, {{2, 3}, {2, 3}}},
      {"scale_affine",
       [](auto& v) { return sum(mul(affine(scale(v[0], 1.7), {1, -2, 3, 0.5}, {0, 1, 2, 3}), v[0])); },
       {{4}}},
      {"tanh_sigmoid", [](auto& v) { return sum(mul(tanh(v[0]), sigmoid(v[0]))); }, {{5}}},
      {"relu", [](auto& v) { return sum(mul(relu(v[0]), v[0])); }, {{6}}},
      {"linear", [](auto& v) { return sum(tanh(linear(v[0], v[1], v[2]))); }, {{3, 4}, {2, 4}, {2}}},
      {"softmax_rows", [](auto& v) { return sum(mul(softmax_rows(v[0]), v[1])); }, {{2, 5}, {2, 5}}},
      {"concat_slice",
       [](auto& v) {
         auto c = concat_cols<double>({v[0], v[1]});
         return sum(mul(slice_cols(c, 1, 4), slice_cols(c, 2, 5)));
       },
       {{2, 3}, {2, 2}}},
      {"slice_rows", [](auto& v) { return sum(tanh(slice_rows(v[0], 1, 3))); }, {{4, 2, 2}}},
      {"scale_rows", [](auto& v) { return sum(tanh(scale_rows(v[0], v[1]))); }, {{3, 2}, {3, 1}}},
      {"weighted_sum", [](auto& v) { return sum(tanh(weighted_sum(softmax_rows(v[0]), v[1]))); }, {{2, 3}, {6, 3}}},
      {"conv2d", [](auto& v) { return sum(tanh(conv2d(v[0], v[1], v[2], 1, 1))); }, {{2, 2, 5, 4}, {3, 2, 3, 3}, {3}}},
      {"conv2d_edge",
       [](auto& v) { return sum(tanh(conv2d(v[0], v[1], v[2], 1, 1, PadMode::kEdge))); },
       {{2, 2, 4, 5}, {3, 2, 3, 3}, {3}}},
      {"conv2d_stride",
       [](auto& v) { return sum(tanh(conv2d(v[0], v[1], v[2], 2, 0))); },
       {{1, 2, 5, 5}, {2, 2, 2, 2}, {2}}},
      {"maxpool", [](auto& v) { return sum(mul(maxpool2d(v[0]), maxpool2d(v[0]))); }, {{1, 2, 4, 5}}},
      {"spatial_softmax",
       [](auto& v) { return sum(mul(spatial_softmax(v[0], 1.0), v[1])); },
       {{2, 3, 4, 5}, {2, 3, 2}}},
      {"global_pools", [](auto& v) { return sum(mul(global_avg_pool(v[0]), global_max_pool(v[0]))); }, {{2, 3, 3, 2}}},
      {"mean", [](auto& v) { return mean(mul(v[0], v[0])); }, {{7}}},
      {"bc_loss",
       [](auto& v) {
         diff::Tensor<double> t({3, 4}, {0.3, -0.2, 0.5, 1, -0.1, 0.4, 0.2, -1, 0.0, 0.1, -0.3, 1});
         return bc_loss(v[0], t, 0.7);
       },
       {{3, 4}}},
  };
}

inline GradSuiteEntry check_op_case(const OpGradCase& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<diff::Parameter<double>> leaves;
  std::vector<diff::Var<double>> vars;
  for (std::size_t i = 0; i < c.shapes.size(); ++i) {
    diff::Tensor<double> t(c.shapes[i]);
    for (auto& v : t.data) v = u(rng);
    leaves.push_back({std::string(c.name) + "." + std::to_string(i), diff::Var<double>(std::move(t), true)});
    vars.push_back(leaves.back().var);
  }
  return {std::string("op/") + c.name, diff::check_gradients(leaves, [&] { return c.fn(vars); })};
}

/// Small config that keeps a full forward cheap enough for finite differences.
inline policy::PolicyConfig tiny_policy_config(policy::Variant v) {
  policy::PolicyConfig c;
  c.variant = v;
  c.regions = 3;
  c.image_h = 24;
  c.image_w = 32;
  c.crop_h = 12;
  c.crop_w = 16;
  c.backbone = {3, 4, 5, 5};
  c.switch_hidden = 4;
  c.head_hidden = {6, 5};
  c.bc_keypoints = 4;
  c.seed = 17;
  return c;
}

/// Forward pass plus behavior-cloning loss on a two-frame random batch,
/// checked against central differences over every parameter tensor.
inline GradSuiteEntry check_end_to_end(policy::Variant v, std::uint64_t seed, std::size_t entries_per_tensor = 24) {
  const auto cfg = tiny_policy_config(v);
  sim::SimConfig sc;
  sc.height = cfg.image_h;
  sc.width = cfg.image_w;
  policy::Policy<double> p(cfg, sim::make_camera(sc));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<img::RgbImage> rgb;
  std::vector<img::DepthMm> depth;
  for (int b = 0; b < 2; ++b) {
    img::RgbImage im(cfg.image_h, cfg.image_w);
    for (auto& px : im.pixels) px = static_cast<std::uint8_t>(byte(rng));
    rgb.push_back(std::move(im));
    depth.push_back({cfg.image_h, cfg.image_w,
                     std::vector<std::uint16_t>(static_cast<std::size_t>(cfg.image_h) * cfg.image_w, b ? 1320 : 1150)});
  }
  std::vector<policy::PolicyInput> batch(2);
  for (int b = 0; b < 2; ++b) {
    batch[b].rgb = &rgb[b];
    batch[b].depth = &depth[b];
    batch[b].object_positions = {{0.01, 0.02, 0.0}, {-0.1, 0.05, 0.0}};
  }
  batch[0].x_ee = {-0.05, 0.02, 0.12};
  batch[1].x_ee = {0.05, -0.04, 0.2};
  batch[1].fingers_closed = true;
  std::vector<std::vector<policy::RegionProposal>> regions;
  if (policy::uses_regions(v))
    for (int b = 0; b < 2; ++b) regions.push_back(policy::propose_regions(rng, cfg));
  diff::Tensor<double> target({2, 4}, {0.02, -0.01, 0.015, 1.0, -0.005, 0.02, -0.02, -1.0});
  auto loss_fn = [&] { return bc_loss(p.forward(batch, regions).action, target, 0.1); };

  GradSuiteEntry e;
  e.name = std::string("end_to_end/") + policy::to_string(v);
  p.params().zero_grad();
  diff::backward(loss_fn());
  for (const auto& prm : p.params().items()) {
    double mag = 0;
    if (prm.var.has_grad())
      for (double g : prm.var.grad()) mag += std::abs(g);
    if (!(mag > 0)) {
      e.every_param_has_grad = false;
      e.result.worst_entry = prm.name + " has no gradient";
    }
  }
  diff::GradCheckOptions opt;
  opt.max_entries_per_tensor = entries_per_tensor;
  const auto worst = e.result.worst_entry;
  e.result = diff::check_gradients(p.params(), loss_fn, opt);
  if (!e.every_param_has_grad) e.result.worst_entry = worst;
  return e;
}

inline std::vector<policy::Variant> all_variants() {
  using policy::Variant;
  return {Variant::kHan, Variant::kMlpAtn, Variant::kNoRoi, Variant::kNoCon, Variant::kBcImage, Variant::kBcStates};
}

/// Every op case followed by the end-to-end check of every variant.
inline std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed = 100,
                                                      const std::function<void(const GradSuiteEntry&)>& on_entry = {}) {
  std::vector<GradSuiteEntry> out;
  const auto ops = op_gradient_cases();
  for (std::size_t i = 0; i < ops.size(); ++i) {
    out.push_back(check_op_case(ops[i], seed + i));
    if (on_entry) on_entry(out.back());
  }
  for (auto v : all_variants()) {
    out.push_back(check_end_to_end(v, seed + 1000));
    if (on_entry) on_entry(out.back());
  }
  return out;
}

}  // namespace han::train
