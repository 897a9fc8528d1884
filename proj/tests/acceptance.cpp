// Acceptance run: one PASS/FAIL line per criterion.
//
//   han_acceptance [criterion...]
//
// Criteria: gradient constraint compose geometry replay trend ablation
// attention determinism. No arguments runs all of them. Exit status is 0
// only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <thread>

#include "han/eval/report.hpp"
#include "han/service/teleop.hpp"
#include "han/train/gradcheck_suite.hpp"
#include "han/train/trainer.hpp"
#include "sdf_oracle.hpp"

using namespace han;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double wall_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- gradient ----------------------------------------------------------------

Verdict gradient() {
  const auto t0 = std::chrono::steady_clock::now();
  int failed = 0, total = 0;
  double worst = 0;
  std::string worst_name;
  train::run_gradient_suite(100, [&](const train::GradSuiteEntry& e) {
    ++total;
    if (!e.passed(1e-4)) {
      ++failed;
      std::printf("  gradient: %s failed (rel %.3g at %s)\n", e.name.c_str(), e.result.max_rel_error,
                  e.result.worst_entry.c_str());
    }
    if (e.result.max_rel_error >= worst) {
      worst = e.result.max_rel_error;
      worst_name = e.name;
    }
  });
  const double secs = wall_since(t0);
  return {failed == 0 && secs < 300,
          fmt("%d/%d checks pass, worst rel err %.2e (%s), %.1f s (limit 300 s)", total - failed, total, worst,
              worst_name.c_str(), secs)};
}

// ---- constraint ----------------------------------------------------------------

struct Scenes {
  sim::SimConfig cfg;
  geo::CameraModel cam;
  std::vector<sim::Observation> obs;
  std::vector<img::DepthMm> depth;
  std::vector<sim::Scene> scenes;
};

Scenes rendered_scenes(int count, std::uint64_t seed) {
  Scenes s;
  s.cam = sim::make_camera(s.cfg);
  const sim::TaskId ids[] = {sim::TaskId::kLifting, sim::TaskId::kStacking, sim::TaskId::kToolUsing};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.25, 0.25), z(0.02, 0.3);
  for (int i = 0; i < count; ++i) {
    const auto task = sim::make_task(ids[i % 3]);
    auto scene = sim::reset(task, i % 2 ? sim::Region::kExtrapolation : sim::Region::kInterpolation, seed + i);
    scene.gripper.x_ee = {u(rng), u(rng), z(rng)};
    s.obs.push_back(sim::render(scene, s.cam, s.cfg));
    s.depth.push_back(img::quantize_depth(s.obs.back().depth));
    s.scenes.push_back(scene);
  }
  return s;
}

Verdict constraint() {
  const auto sc = rendered_scenes(40, 900);
  std::mt19937_64 rng(77);
  int forwards = 0, violations = 0;
  double worst_sum = 0, worst_off = 0, worst_k_excess = 0, worst_norm_excess = 0;
  for (int round = 0; round < 25; ++round) {
    policy::PolicyConfig cfg;
    cfg.seed = 1000 + round;
    policy::Policy<float> p(cfg, sc.cam);
    std::vector<policy::PolicyInput> batch;
    for (std::size_t i = 0; i < sc.obs.size(); ++i) {
      policy::PolicyInput in;
      in.rgb = &sc.obs[i].rgb;
      in.depth = &sc.depth[i];
      in.x_ee = sc.scenes[i].gripper.x_ee;
      in.fingers_closed = (i + round) % 2;
      batch.push_back(in);
    }
    diff::NoGradGuard guard;
    const auto res = p.forward(batch, rng);
    for (std::size_t b = 0; b < res.outputs.size(); ++b) {
      const auto& o = res.outputs[b];
      ++forwards;
      bool ok = true;
      double csum = 0;
      for (double c : o.confidences) {
        ok = ok && c >= 0 && c <= 1;
        csum += c;
      }
      worst_sum = std::max(worst_sum, std::abs(csum - 1));
      ok = ok && std::abs(csum - 1) <= 1e-6;
      for (int j = 0; j < 3; ++j) {
        worst_off = std::max(worst_off, std::abs((*o.x_offset)[j]));
        ok = ok && (*o.x_offset)[j] >= -0.1 && (*o.x_offset)[j] <= 0.1;
      }
      worst_k_excess = std::max({worst_k_excess, -*o.k, *o.k - 1});
      ok = ok && *o.k >= 0 && *o.k <= 1;
      const Eigen::Vector3d a(o.action[0], o.action[1], o.action[2]);
      const double bound = (*o.x_kp + *o.x_offset - batch[b].x_ee).norm();
      worst_norm_excess = std::max(worst_norm_excess, a.norm() - bound);
      // Float forward: allow rounding of the composed action only.
      ok = ok && a.norm() <= bound * (1 + 1e-6) + 1e-7;
      violations += !ok;
    }
  }
  return {forwards == 1000 && violations == 0,
          fmt("%d forwards, %d violations; max |sum c - 1| %.1e, max |offset| %.4f, k excess %.1e, "
              "|a| - bound %.1e",
              forwards, violations, worst_sum, worst_off, std::max(worst_k_excess, 0.0), worst_norm_excess)};
}

// ---- compose -----------------------------------------------------------------

Verdict compose() {
  using diff::Tensor;
  using diff::Var;
  auto v = [](std::vector<double> x) {
    const int n = static_cast<int>(x.size());
    return Var<double>(Tensor<double>({1, n}, std::move(x)));
  };
  struct Case {
    std::vector<double> kp, off, k, ee, g, want;
  };
  const std::vector<Case> cases = {
      {{0.4, 0.1, 0.2}, {0, 0, 0.05}, {0.5}, {0.3, 0.1, 0.1}, {-2.5}, {0.05, 0, 0.075, -2.5}},
      {{0.4, 0.1, 0.2}, {0.01, -0.02, 0.05}, {0.0}, {0.3, 0.1, 0.1}, {1.0}, {0, 0, 0, 1.0}},
      {{0.4, 0.1, 0.2}, {0.01, -0.02, 0.05}, {0.8}, {0.41, 0.08, 0.25}, {0.3}, {0, 0, 0, 0.3}},
      {{-0.2, 0.3, 0.0}, {0.1, -0.1, 0.02}, {1.0}, {0.1, 0.1, 0.1}, {4.0}, {-0.2, 0.1, -0.08, 4.0}},
      {{0.0, 0.0, 0.5}, {0.0, 0.0, -0.1}, {0.25}, {0.2, -0.2, 0.0}, {-1.0}, {-0.05, 0.05, 0.1, -1.0}},
  };
  double worst = 0;
  for (const auto& c : cases) {
    const auto a = policy::compose_action(v(c.kp), v(c.off), v(c.k), v(c.ee), v(c.g));
    for (int j = 0; j < 4; ++j) worst = std::max(worst, std::abs(a.value()[j] - c.want[j]));
  }
  return {worst <= 1e-7, fmt("%zu hand-evaluated cases, max abs error %.2e (limit 1e-7)", cases.size(), worst)};
}

// ---- geometry ----------------------------------------------------------------

Verdict geometry() {
  const sim::SimConfig cfg;
  const auto cam = sim::make_camera(cfg);
  std::mt19937_64 rng(42);
  double worst_rt = 0;
  {
    std::uniform_real_distribution<double> u(0, cam.height - 1), v(0, cam.width - 1), d(0.1, 5.0);
    for (int i = 0; i < 10000; ++i) {
      const geo::Pixel px{u(rng), v(rng), d(rng)};
      const auto back = geo::project(cam, geo::cam_to_robot(cam, geo::unproject(cam, px)));
      worst_rt = std::max({worst_rt, std::abs(back.u - px.u), std::abs(back.v - px.v),
                           std::abs(*back.depth - *px.depth)});
    }
  }
  double worst_surface = 0;
  int checked = 0;
  const sim::TaskId ids[] = {sim::TaskId::kLifting, sim::TaskId::kStacking, sim::TaskId::kToolUsing};
  std::uniform_real_distribution<double> xy(-0.2, 0.2), z(0.05, 0.3);
  std::uniform_int_distribution<int> pr(0, cam.height - 1), pc(0, cam.width - 1);
  for (std::uint64_t seed = 0; checked < 3000; ++seed) {
    const auto task = sim::make_task(ids[seed % 3]);
    auto s = sim::reset(task, seed % 2 ? sim::Region::kExtrapolation : sim::Region::kInterpolation, seed);
    s.gripper.x_ee = {xy(rng), xy(rng), z(rng)};
    const auto obs = sim::render(s, cam, cfg);
    const auto geo_s = sim::scene_geometry(s, cfg);
    for (int k = 0; k < 100 && checked < 3000; ++k) {
      const int r = pr(rng), c = pc(rng);
      const double d = obs.depth.at(r, c);
      if (d >= cfg.far_depth) continue;
      const auto p = geo::cam_to_robot(cam, geo::unproject(cam, {double(r), double(c), d}));
      worst_surface = std::max(worst_surface, sdf_oracle::scene_sdf(geo_s, p.vec()));
      ++checked;
    }
  }
  return {worst_rt < 1e-9 && worst_surface < 0.002,
          fmt("10000 round trips, max error %.2e (limit 1e-9); %d depth pixels, max surface distance %.4f mm "
              "(limit 2 mm)",
              worst_rt, checked, worst_surface * 1000)};
}

// ---- replay ------------------------------------------------------------------

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "han_acceptance";
  std::filesystem::create_directories(dir);
  const auto p = dir / name;
  std::filesystem::remove_all(p);
  return p.string();
}

// Replays states and re-renders every stored observation.
std::string replay_exact(const train::Dataset& ds) {
  const auto cam = ds.header.camera();
  std::size_t mismatched_frames = 0;
  const auto r = train::replay(ds, [&](std::size_t d, std::size_t t, const sim::Scene& s) {
    const auto f = train::observe(s, cam, ds.header.sim);
    const auto& stored = ds.demos[d].frames[t];
    mismatched_frames += !(f.rgb.pixels == stored.rgb.pixels && f.depth == stored.depth);
  });
  if (!r.ok) return fmt("demo %d frame %d: %s", r.demo, r.frame, r.message.c_str());
  if (mismatched_frames) return fmt("%zu frames render differently", mismatched_frames);
  return {};
}

// Records expert actions through the teleop server, as a human operator would.
train::Dataset record_over_wire(const train::Dataset& src, const std::string& path) {
  service::ServerOptions o;
  o.task = src.header.task;
  o.out = path;
  service::TeleopServer server(o);
  const int port = server.start();
  for (const auto& demo : src.demos) {
    service::Client c("127.0.0.1", port);
    c.request({{"type", "hello"},
               {"version", service::kProtocolVersion},
               {"task", sim::to_string(src.header.task)},
               {"seed", demo.seed},
               {"region", sim::to_string(demo.region)}});
    c.request({{"type", "start"}});
    for (const auto& f : demo.frames)
      c.request({{"type", "action"},
                 {"delta", {f.action[0], f.action[1], f.action[2]}},
                 {"grip", f.action[3] > 0 ? "close" : "open"}});
    const auto r = c.request({{"type", "save"}});
    if (r["type"] != "saved") throw std::runtime_error("teleop save failed: " + r.dump());
  }
  server.stop();
  return train::read_dataset(path);
}

Verdict replay() {
  int datasets = 0, demos = 0, frames = 0;
  std::vector<std::string> errors;
  for (auto task : {sim::TaskId::kLifting, sim::TaskId::kStacking, sim::TaskId::kToolUsing}) {
    for (auto region : {sim::Region::kInterpolation, sim::Region::kExtrapolation}) {
      const auto name = std::string(sim::to_string(task)) + "_" + sim::to_string(region);
      const auto collected = train::collect_demos(task, region, 5, 31);
      const auto path = temp_path(name + ".handata");
      train::write_dataset(path, collected);
      for (const auto& ds : {train::read_dataset(path), record_over_wire(collected, temp_path(name + "_teleop.handata"))}) {
        ++datasets;
        demos += static_cast<int>(ds.demos.size());
        for (const auto& d : ds.demos) frames += static_cast<int>(d.frames.size());
        const auto err = replay_exact(ds);
        if (!err.empty()) errors.push_back(name + " (" + train::to_string(ds.demos.front().source) + "): " + err);
      }
    }
  }
  for (const auto& e : errors) std::printf("  replay: %s\n", e.c_str());
  return {errors.empty(), fmt("%d datasets (expert and teleop-recorded, 3 tasks x 2 regions), %d demos, %d frames, "
                              "%zu mismatches",
                              datasets, demos, frames, errors.size())};
}

// ---- trained runs ------------------------------------------------------------

constexpr int kTrendDemos = 50;
constexpr int kTrendEpochs = 100;
constexpr int kEvalEvery = 10;
constexpr int kEvalRollouts = 30;
constexpr std::uint64_t kEvalSeed = 1000;

struct TrainedRun {
  train::TrainResult result;
  double max_interp = 0, max_ext = 0, final_interp = 0, final_ext = 0;
  double cpu = 0, wall = 0;
};

const train::Dataset& lifting_demos() {
  static const auto ds = train::collect_demos(sim::TaskId::kLifting, sim::Region::kInterpolation, kTrendDemos, 1);
  return ds;
}

const TrainedRun& lifting_run(policy::Variant v) {
  static std::map<policy::Variant, TrainedRun> cache;
  if (auto it = cache.find(v); it != cache.end()) return it->second;
  const auto& ds = lifting_demos();
  const double c0 = cpu_seconds();
  const auto t0 = std::chrono::steady_clock::now();
  policy::PolicyConfig pc;
  pc.variant = v;
  policy::Policy<float> p(pc, ds.header.camera());
  train::TrainConfig tc;
  tc.epochs = kTrendEpochs;
  tc.eval_every = kEvalEvery;
  train::TrainHooks hooks;
  hooks.evaluate = eval::training_evaluator(sim::TaskId::kLifting, kEvalRollouts, kEvalSeed, ds.header.sim);
  TrainedRun run;
  run.result = train::train_policy(p, ds, tc, hooks);
  for (const auto& e : run.result.epochs) {
    if (e.eval.is_null()) continue;
    run.max_interp = std::max(run.max_interp, e.eval["interpolation"].get<double>());
    run.max_ext = std::max(run.max_ext, e.eval["extrapolation"].get<double>());
    run.final_interp = e.eval["interpolation"].get<double>();
    run.final_ext = e.eval["extrapolation"].get<double>();
  }
  run.cpu = cpu_seconds() - c0;
  run.wall = wall_since(t0);
  std::printf("  %s: interp max %.2f final %.2f, ext max %.2f final %.2f, loss %.4f -> %.4f, %.0f s cpu\n",
              policy::to_string(v), run.max_interp, run.final_interp, run.max_ext, run.final_ext,
              run.result.epochs.front().mean_loss, run.result.epochs.back().mean_loss, run.cpu);
  std::fflush(stdout);
  return cache.emplace(v, std::move(run)).first->second;
}

Verdict trend() {
  const double c0 = cpu_seconds();
  lifting_demos();
  const auto& han_run = lifting_run(policy::Variant::kHan);
  const auto& bc = lifting_run(policy::Variant::kBcImage);
  const double cpu = cpu_seconds() - c0;
  const double margin = han_run.max_ext - bc.max_ext;
  const double loss_ratio = han_run.result.epochs.front().mean_loss / han_run.result.epochs.back().mean_loss;
  std::printf("INFO training_loss_drop: han epoch-1 / final mean loss = %.1fx (target >= 10x)\n", loss_ratio);
  return {han_run.max_interp >= 0.9 && margin >= 0.2 - 1e-12 && cpu <= 3600,
          fmt("max over training, %d rollouts per region: han interp %.2f (>= 0.9), ext han %.2f vs bc_image %.2f, "
              "margin %.2f (>= 0.2); final checkpoint: han %.2f/%.2f, bc_image %.2f/%.2f; %.0f cpu-s (<= 3600)",
              kEvalRollouts, han_run.max_interp, han_run.max_ext, bc.max_ext, margin, han_run.final_interp,
              han_run.final_ext, bc.final_interp, bc.final_ext, cpu)};
}

Verdict ablation() {
  const double h = lifting_run(policy::Variant::kHan).max_ext;
  const double nc = lifting_run(policy::Variant::kNoCon).max_ext;
  const double nr = lifting_run(policy::Variant::kNoRoi).max_ext;
  const double tie = 0.05 + 1e-12;
  return {h >= nc - tie && nc >= nr - tie,
          fmt("lifting extrapolation, max over training: han %.2f >= no_con %.2f >= no_roi %.2f (ties within 0.05); "
              "final: han %.2f, no_con %.2f, no_roi %.2f",
              h, nc, nr, lifting_run(policy::Variant::kHan).final_ext, lifting_run(policy::Variant::kNoCon).final_ext,
              lifting_run(policy::Variant::kNoRoi).final_ext)};
}

Verdict attention() {
  constexpr int kEpochs = 60;
  const auto ds = train::collect_demos(sim::TaskId::kStacking, sim::Region::kInterpolation, kTrendDemos, 1);
  policy::PolicyConfig pc;
  policy::Policy<float> p(pc, ds.header.camera());
  train::TrainConfig tc;
  tc.epochs = kEpochs;
  train::train_policy(p, ds, tc);
  std::vector<eval::Rollout> kept;
  const auto cell = eval::evaluate_policy(p, sim::TaskId::kStacking, sim::Region::kInterpolation, kEvalRollouts,
                                          kEvalSeed, ds.header.sim, &kept);
  const auto att = eval::pooled_attention(kept);
  if (att.is_null())
    return {false, fmt("no successful stacking rollouts (%d/%d) after %d epochs", cell.successes, cell.rollouts,
                       kEpochs)};
  const double agree = att["agreement"], switched = att["rollouts_with_detected_switch"];
  return {agree >= 0.8 && switched >= 0.7,
          fmt("stacking, %d/%d successful rollouts: nearest-object agreement %.2f (>= 0.8), detected switch in %.2f "
              "(>= 0.7)",
              cell.successes, cell.rollouts, agree, switched)};
}

// ---- determinism -------------------------------------------------------------

Verdict determinism() {
  struct Run {
    std::vector<double> losses;
    std::vector<Eigen::Vector3d> x_ee;
    std::vector<std::array<double, 4>> actions;
    std::vector<std::uint8_t> dataset;
  };
  auto once = [] {
    Run r;
    const auto ds = train::collect_demos(sim::TaskId::kLifting, sim::Region::kInterpolation, 4, 9);
    r.dataset = train::encode_dataset(ds);
    policy::PolicyConfig pc;
    pc.seed = 3;
    policy::Policy<float> p(pc, ds.header.camera());
    train::TrainConfig tc;
    tc.epochs = 3;
    tc.seed = 11;
    r.losses = train::train_policy(p, ds, tc).step_losses;
    const auto ro = eval::rollout(eval::policy_controller(p, 77), sim::TaskId::kLifting, sim::Region::kExtrapolation,
                                  77, 40, ds.header.sim);
    for (const auto& s : ro.steps) {
      r.x_ee.push_back(s.x_ee);
      r.actions.push_back(s.output.action);
    }
    return r;
  };
  const auto a = once(), b = once();
  const bool same_loss = a.losses.size() == b.losses.size() &&
                         std::memcmp(a.losses.data(), b.losses.data(), a.losses.size() * sizeof(double)) == 0;
  bool same_traj = a.x_ee.size() == b.x_ee.size() && a.actions == b.actions;
  for (std::size_t i = 0; same_traj && i < a.x_ee.size(); ++i)
    same_traj = std::memcmp(a.x_ee[i].data(), b.x_ee[i].data(), 3 * sizeof(double)) == 0;
  return {same_loss && same_traj && a.dataset == b.dataset,
          fmt("dataset bytes %s, %zu-step loss curve %s, %zu-step rollout trajectory %s",
              a.dataset == b.dataset ? "identical" : "differ", a.losses.size(), same_loss ? "identical" : "differs",
              a.x_ee.size(), same_traj ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient", gradient}, {"constraint", constraint}, {"compose", compose},
      {"geometry", geometry}, {"replay", replay},         {"trend", trend},
      {"ablation", ablation}, {"attention", attention},   {"determinism", determinism},
  };
  std::set<std::string> selected(argv + 1, argv + argc);
  for (const auto& s : selected)
    if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == s; })) {
      std::fprintf(stderr, "unknown criterion '%s'; valid:", s.c_str());
      for (const auto& c : criteria) std::fprintf(stderr, " %s", c.first.c_str());
      std::fprintf(stderr, "\n");
      return 2;
    }
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!selected.empty() && !selected.count(name)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %s: %s [%.0f s]\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str(), wall_since(t0));
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
