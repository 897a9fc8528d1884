#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>

#include "han/diff/adam.hpp"
#include "han/policy/model_io.hpp"
#include "han/train/dataset.hpp"
#include "han/train/loss.hpp"

namespace han::train {

struct TrainConfig {
  double lambda = 0.1;
  double lr = 1e-3;
  int batch_size = 32;
  int epochs = 40;
  std::uint64_t seed = 0;
  int eval_every = 0;  // epochs between evaluation callbacks; 0 = only at the end
  long max_steps = 0;  // optional cap on optimizer steps; 0 = none
  // Position components of a and a* are multiplied by this inside the loss,
  // so meters-scale deltas are not swamped by the +-1 grip entry.
  double loss_position_scale = 50.0;

  void validate() const {
    if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
    if (!(lr > 0)) throw ConfigError("learning rate must be positive");
    if (batch_size < 1 || epochs < 1) throw ConfigError("batch size and epochs must be positive");
    if (eval_every < 0 || max_steps < 0) throw ConfigError("eval_every and max_steps must be >= 0");
    if (!(loss_position_scale > 0)) throw ConfigError("loss_position_scale must be positive");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lambda", c.lambda}, {"lr", c.lr},       {"batch_size", c.batch_size}, {"epochs", c.epochs},
          {"seed", c.seed},     {"eval_every", c.eval_every}, {"max_steps", c.max_steps},
          {"loss_position_scale", c.loss_position_scale}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    if (j.contains("lambda")) c.lambda = j["lambda"].get<double>();
    if (j.contains("lr")) c.lr = j["lr"].get<double>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("eval_every")) c.eval_every = j["eval_every"].get<int>();
    if (j.contains("max_steps")) c.max_steps = j["max_steps"].get<long>();
    if (j.contains("loss_position_scale")) c.loss_position_scale = j["loss_position_scale"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed train config: ") + e.what());
  }
  c.validate();
  return c;
}

/// bc_loss on actions whose position entries are rescaled by loss_position_scale.
template <typename T>
diff::Var<T> scaled_bc_loss(const diff::Var<T>& action, diff::Tensor<T> target, const TrainConfig& cfg) {
  if (cfg.loss_position_scale == 1.0) return bc_loss(action, target, cfg.lambda);
  const T s = static_cast<T>(cfg.loss_position_scale);
  std::vector<T> mult(action.size(), T(1));
  for (std::size_t i = 0; i < mult.size(); ++i)
    if (i % 4 != 3) mult[i] = s;
  for (std::size_t i = 0; i < target.size(); ++i) target.data[i] *= mult[i];
  return bc_loss(diff::affine(action, mult, std::vector<T>(action.size(), T(0))), target, cfg.lambda);
}

/// One (observation, a*) pair, pointing into a Dataset.
struct Sample {
  const DemoFrame* frame = nullptr;
  std::vector<Eigen::Vector3d> objects;
};

/// Flattens demos into samples; object poses come from replaying each demo.
inline std::vector<Sample> make_samples(const Dataset& ds) {
  std::vector<Sample> out;
  out.reserve(ds.frame_count());
  const auto r = replay(ds, [&](std::size_t d, std::size_t t, const sim::Scene& s) {
    out.push_back({&ds.demos[d].frames[t], object_positions(s)});
  });
  if (!r.ok)
    throw FormatError("dataset demo " + std::to_string(r.demo) + " does not replay at frame " +
                      std::to_string(r.frame) + ": " + r.message);
  return out;
}

inline policy::PolicyInput to_input(const Sample& s) {
  policy::PolicyInput in;
  in.rgb = &s.frame->rgb;
  in.depth = &s.frame->depth;
  in.x_ee = s.frame->x_ee;
  in.fingers_closed = s.frame->fingers_closed;
  in.object_positions = s.objects;
  return in;
}

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0;
  long steps = 0;
  double seconds = 0;
  nlohmann::json eval;  // null unless evaluated this epoch
};

struct TrainResult {
  std::vector<double> step_losses;
  std::vector<EpochRecord> epochs;
  double best_score = -1;  // max over evaluations of eval["success"]
  int best_epoch = -1;
};

struct TrainHooks {
  /// Called after epochs selected by eval_every and after the last epoch.
  /// Must return an object; its "success" number drives best-checkpoint tracking.
  std::function<nlohmann::json(const policy::Policy<float>&, int epoch)> evaluate;
  /// Output directory for metrics.jsonl and checkpoints; empty = no files.
  std::string out_dir;
  nlohmann::json metadata = nlohmann::json::object();  // echoed into model metadata
  bool verbose = false;
};

/// Minibatch Adam on shuffled samples. Region proposals and shuffling draw from
/// one RNG seeded by cfg.seed, so a run is a pure function of its inputs.
inline TrainResult train_samples(policy::Policy<float>& policy, const std::vector<Sample>& samples,
                                 const TrainConfig& cfg, const TrainHooks& hooks = {},
                                 nlohmann::json meta = nlohmann::json::object()) {
  cfg.validate();
  if (samples.empty()) throw ConfigError("training needs at least one sample");
  std::mt19937_64 rng(cfg.seed);
  auto optim = diff::make_optim_state(policy.params(), diff::AdamConfig{cfg.lr});
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);

  namespace fs = std::filesystem;
  std::ofstream metrics;
  auto ckpt = [&](const std::string& name) { return (fs::path(hooks.out_dir) / name).string(); };
  meta.update(hooks.metadata);
  meta["train"] = to_json(cfg);
  if (!hooks.out_dir.empty()) {
    fs::create_directories(hooks.out_dir);
    metrics.open(ckpt("metrics.jsonl"), std::ios::trunc);
    if (!metrics) throw FormatError("cannot write metrics log in " + hooks.out_dir);
  }

  TrainResult result;
  long step = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    long epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_steps && step >= cfg.max_steps) break;
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<policy::PolicyInput> batch;
      diff::Tensor<float> target({static_cast<int>(end - start), 4});
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = samples[order[i]];
        batch.push_back(to_input(s));
        for (int j = 0; j < 4; ++j) target.data[(i - start) * 4 + j] = s.frame->action[j];
      }
      const auto fwd = policy.forward(batch, rng);
      const auto loss = scaled_bc_loss(fwd.action, target, cfg);
      const double value = loss.item();
      policy.params().zero_grad();
      bool finite = std::isfinite(value);
      if (finite) {
        diff::backward(loss);
        diff::fill_missing_grads(policy.params());
        for (const auto& p : policy.params().items())
          for (float g : p.var.grad())
            if (!std::isfinite(g)) finite = false;
      }
      if (!finite) {
        if (!hooks.out_dir.empty()) policy::save_model(ckpt("last_good.ckpt"), policy, meta);
        throw NumericError("non-finite loss or gradient at step " + std::to_string(step) +
                           (hooks.out_dir.empty() ? "" : "; last good parameters saved to " + ckpt("last_good.ckpt")));
      }
      diff::adam_step(policy.params(), optim);
      result.step_losses.push_back(value);
      loss_sum += value;
      ++epoch_steps;
      ++step;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.steps = epoch_steps;
    rec.mean_loss = epoch_steps ? loss_sum / epoch_steps : 0.0;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool last = epoch == cfg.epochs || (cfg.max_steps && step >= cfg.max_steps);
    if (hooks.evaluate && (last || (cfg.eval_every && epoch % cfg.eval_every == 0))) {
      rec.eval = hooks.evaluate(policy, epoch);
      const double score = rec.eval.value("success", -1.0);
      if (score > result.best_score) {
        result.best_score = score;
        result.best_epoch = epoch;
        if (!hooks.out_dir.empty()) {
          auto m = meta;
          m["epoch"] = epoch;
          m["eval"] = rec.eval;
          policy::save_model(ckpt("best.ckpt"), policy, m);
        }
      }
    }
    if (metrics.is_open()) {
      nlohmann::json line = {{"epoch", rec.epoch},
                             {"mean_loss", rec.mean_loss},
                             {"steps", rec.steps},
                             {"total_steps", step},
                             {"seconds", rec.seconds}};
      if (!rec.eval.is_null()) line["eval"] = rec.eval;
      metrics << line.dump() << "\n" << std::flush;
    }
    if (hooks.verbose) {
      std::fprintf(stderr, "epoch %d loss %.6g steps %ld %.1fs%s\n", epoch, rec.mean_loss, step, rec.seconds,
                   rec.eval.is_null() ? "" : (" eval " + rec.eval.dump()).c_str());
    }
    result.epochs.push_back(std::move(rec));
    if (last) break;
  }
  if (!hooks.out_dir.empty()) {
    auto m = meta;
    m["epoch"] = result.epochs.back().epoch;
    m["best_epoch"] = result.best_epoch;
    m["best_score"] = result.best_score;
    policy::save_model(ckpt("final.ckpt"), policy, m);
  }
  return result;
}

/// Trains on every frame of a dataset.
inline TrainResult train_policy(policy::Policy<float>& policy, const Dataset& ds, const TrainConfig& cfg,
                                const TrainHooks& hooks = {}) {
  if (ds.demos.empty()) throw ConfigError("training needs a nonempty dataset");
  if (!(ds.header.camera() == policy.camera())) throw ConfigError("dataset camera differs from the policy camera");
  nlohmann::json meta = {{"dataset_fingerprint", ds.header.fingerprint()},
                         {"task", sim::to_string(ds.header.task)},
                         {"demos", ds.demos.size()},
                         {"frames", ds.frame_count()}};
  meta["source"] = to_string(ds.demos.front().source);
  return train_samples(policy, make_samples(ds), cfg, hooks, meta);
}

}  // namespace han::train
