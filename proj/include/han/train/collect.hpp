#pragma once

#include <map>
#include <random>
#include <sstream>

#include "han/sim/expert.hpp"
#include "han/sim/render.hpp"
#include "han/train/dataset.hpp"

namespace han::train {

struct CollectOptions {
  sim::SimConfig sim;
  sim::ExpertConfig expert;
  bool noise = true;  // Gaussian action noise on the scripted expert
  int min_attempts_before_abort = 10;
  nlohmann::json metadata = nlohmann::json::object();  // copied into every demo
};

/// Renders the observation a policy or recorder sees for `s`.
inline DemoFrame observe(const sim::Scene& s, const geo::CameraModel& cam, const sim::SimConfig& cfg) {
  auto obs = sim::render(s, cam, cfg);
  DemoFrame f;
  f.rgb = std::move(obs.rgb);
  f.depth = img::quantize_depth(obs.depth);
  f.x_ee = s.gripper.x_ee;
  f.fingers_closed = s.gripper.fingers == sim::Fingers::kClosed;
  return f;
}

struct EpisodeOutcome {
  bool success = false;
  std::string failure;  // "expert_failed" or "timeout"
  Demonstration demo;
};

/// One scripted-expert episode. Stored actions are the ones executed.
inline EpisodeOutcome expert_episode(sim::TaskId task_id, sim::Region region, std::uint64_t reset_seed,
                                     std::uint64_t noise_seed, const CollectOptions& opt) {
  const auto task = sim::make_task(task_id);
  const auto cam = sim::make_camera(opt.sim);
  EpisodeOutcome out;
  out.demo.region = region;
  out.demo.source = Source::kExpert;
  out.demo.seed = reset_seed;
  out.demo.initial = sim::reset(task, region, reset_seed, opt.sim);
  std::mt19937_64 noise(noise_seed);
  sim::Scene s = out.demo.initial;
  for (int t = 0; t < task.max_steps; ++t) {
    const auto r = sim::scripted_expert(task, s, opt.sim, opt.noise ? &noise : nullptr, opt.expert);
    if (r.failed) {
      out.failure = "expert_failed";
      return out;
    }
    DemoFrame f = observe(s, cam, opt.sim);
    f.action = to_action_vec(r.action);
    out.demo.frames.push_back(std::move(f));
    s = sim::step(task, s, r.action, opt.sim);
    if (sim::success(task, s) && out.demo.frames.size() >= 2) {
      out.success = true;
      return out;
    }
  }
  out.failure = "timeout";
  return out;
}

/// Collects n successful expert demos; failed episodes are discarded and
/// resampled. Aborts once more than half of the attempts have failed.
inline Dataset collect_demos(sim::TaskId task, sim::Region region, int n, std::uint64_t seed,
                             const CollectOptions& opt = {}) {
  if (n < 1) throw ConfigError("collect_demos: n must be >= 1");
  Dataset ds;
  ds.header.task = task;
  ds.header.sim = opt.sim;
  std::mt19937_64 seeds(seed);
  int attempts = 0, failures = 0;
  std::map<std::string, int> reasons;
  while (static_cast<int>(ds.demos.size()) < n) {
    const std::uint64_t reset_seed = seeds(), noise_seed = seeds();
    ++attempts;
    auto ep = expert_episode(task, region, reset_seed, noise_seed, opt);
    if (ep.success) {
      ep.demo.metadata = opt.metadata;
      ep.demo.metadata["noise_seed"] = noise_seed;
      ep.demo.metadata["expert_noise"] = opt.noise;
      ds.demos.push_back(std::move(ep.demo));
      continue;
    }
    ++failures;
    ++reasons[ep.failure];
    if (attempts >= opt.min_attempts_before_abort && 2 * failures > attempts) {
      std::ostringstream msg;
      msg << "expert failure rate " << failures << "/" << attempts << " exceeds 50% on " << sim::to_string(task)
          << "/" << sim::to_string(region) << " (";
      for (const auto& [k, v] : reasons) msg << k << "=" << v << " ";
      msg << "last seed " << reset_seed << ")";
      throw ConfigError(msg.str());
    }
  }
  return ds;
}

}  // namespace han::train
