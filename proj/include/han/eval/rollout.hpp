#pragma once

#include <chrono>
#include <functional>
#include <random>

#include "han/policy/policy.hpp"
#include "han/sim/expert.hpp"
#include "han/train/collect.hpp"

namespace han::eval {

/// Maps (scene, rendered observation) to an output whose action[3] > 0 means close.
/// The scene is for oracle controllers and pose-based baselines only.
using Controller = std::function<policy::PolicyOutput(const sim::Scene&, const train::DemoFrame&)>;

struct StepRecord {
  Eigen::Vector3d x_ee = Eigen::Vector3d::Zero();
  bool fingers_closed = false;
  std::optional<int> attached;
  std::vector<Eigen::Vector3d> object_centers;  // scene order
  policy::PolicyOutput output;
  sim::Action action;
  img::RgbImage rgb;  // observation the controller saw
};

struct Rollout {
  sim::TaskId task = sim::TaskId::kLifting;
  sim::Region region = sim::Region::kInterpolation;
  std::uint64_t seed = 0;
  bool success = false;
  std::string failure;  // "timeout" or "non_finite_action: ..."
  std::vector<std::string> object_names;
  std::vector<StepRecord> steps;
  sim::Scene final_scene;
};

inline sim::Action to_sim_action(const std::array<double, 4>& a) {
  sim::Action out;
  for (int j = 0; j < 3; ++j) out.delta[j] = static_cast<float>(a[j]);
  out.grip = a[3] > 0 ? sim::Grip::kClose : sim::Grip::kOpen;
  return out;
}

/// Closed loop: render, act, threshold grip, step; stops on success or after
/// max_steps (task default when 0).
inline Rollout rollout(const Controller& ctrl, sim::TaskId task_id, sim::Region region, std::uint64_t seed,
                       int max_steps = 0, const sim::SimConfig& cfg = {}) {
  const auto task = sim::make_task(task_id);
  const auto cam = sim::make_camera(cfg);
  Rollout out;
  out.task = task_id;
  out.region = region;
  out.seed = seed;
  sim::Scene s = sim::reset(task, region, seed, cfg);
  for (const auto& o : s.objects) out.object_names.push_back(o.name);
  const int limit = max_steps > 0 ? max_steps : task.max_steps;
  for (int t = 0; t < limit; ++t) {
    const auto obs = train::observe(s, cam, cfg);
    StepRecord rec;
    rec.x_ee = s.gripper.x_ee;
    rec.fingers_closed = s.gripper.fingers == sim::Fingers::kClosed;
    rec.attached = s.gripper.attached;
    for (const auto& o : s.objects) rec.object_centers.push_back(o.center());
    rec.output = ctrl(s, obs);
    rec.rgb = obs.rgb;
    for (double v : rec.output.action)
      if (!std::isfinite(v)) {
        out.failure = "non_finite_action at step " + std::to_string(t);
        out.steps.push_back(std::move(rec));
        out.final_scene = s;
        return out;
      }
    rec.action = to_sim_action(rec.output.action);
    s = sim::step(task, s, rec.action, cfg);
    out.steps.push_back(std::move(rec));
    if (sim::success(task, s)) {
      out.success = true;
      out.final_scene = s;
      return out;
    }
  }
  out.failure = "timeout";
  out.final_scene = s;
  return out;
}

/// Learned policy as a controller. Region proposals come from a stream seeded
/// per episode, so a rollout depends only on (checkpoint, seed).
template <typename T>
Controller policy_controller(const policy::Policy<T>& p, std::uint64_t episode_seed) {
  auto rng = std::make_shared<std::mt19937_64>(episode_seed ^ 0x9e3779b97f4a7c15ull);
  return [&p, rng](const sim::Scene& s, const train::DemoFrame& obs) {
    policy::PolicyInput in;
    in.rgb = &obs.rgb;
    in.depth = &obs.depth;
    in.x_ee = obs.x_ee;
    in.fingers_closed = obs.fingers_closed;
    in.object_positions = train::object_positions(s);
    return p.act(in, *rng);
  };
}

/// Noise-free scripted expert as a controller.
inline Controller expert_controller(sim::TaskId task_id, const sim::SimConfig& cfg = {}) {
  const auto task = sim::make_task(task_id);
  return [task, cfg](const sim::Scene& s, const train::DemoFrame&) {
    const auto r = sim::scripted_expert(task, s, cfg);
    policy::PolicyOutput o;
    const auto a = train::to_action_vec(r.action);
    for (int j = 0; j < 4; ++j) o.action[j] = a[j];
    return o;
  };
}

/// Seed of rollout i in a cell; the schedule is recorded in reports.
inline std::uint64_t rollout_seed(std::uint64_t base, int i) { return base + 7919ull * static_cast<std::uint64_t>(i); }

struct CellResult {
  int rollouts = 0;
  int successes = 0;
  double rate() const { return rollouts ? static_cast<double>(successes) / rollouts : 0.0; }
  std::vector<std::uint64_t> seeds;
  std::vector<bool> outcome;
  double mean_steps = 0;
  double seconds = 0;
};

template <typename MakeController>
CellResult run_cell(MakeController&& make, sim::TaskId task, sim::Region region, int n, std::uint64_t base_seed,
                    const sim::SimConfig& cfg = {}, std::vector<Rollout>* keep = nullptr) {
  CellResult c;
  const auto t0 = std::chrono::steady_clock::now();
  double steps = 0;
  for (int i = 0; i < n; ++i) {
    const auto seed = rollout_seed(base_seed, i);
    auto r = rollout(make(seed), task, region, seed, 0, cfg);
    ++c.rollouts;
    c.successes += r.success;
    c.seeds.push_back(seed);
    c.outcome.push_back(r.success);
    steps += r.steps.size();
    if (keep) keep->push_back(std::move(r));
  }
  c.mean_steps = n ? steps / n : 0.0;
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

template <typename T>
CellResult evaluate_policy(const policy::Policy<T>& p, sim::TaskId task, sim::Region region, int n,
                           std::uint64_t base_seed, const sim::SimConfig& cfg = {},
                           std::vector<Rollout>* keep = nullptr) {
  return run_cell([&p](std::uint64_t seed) { return policy_controller(p, seed); }, task, region, n, base_seed, cfg,
                  keep);
}

}  // namespace han::eval
