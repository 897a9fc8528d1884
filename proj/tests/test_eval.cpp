#include <gtest/gtest.h>

#include <filesystem>

#include "han/eval/overlay.hpp"
#include "han/eval/report.hpp"
#include "han/train/trainer.hpp"

using namespace han;
using namespace han::eval;

namespace {

policy::PolicyConfig small_policy(policy::Variant v) {
  policy::PolicyConfig c;
  c.variant = v;
  c.regions = 4;
  c.backbone = {4, 8, 8, 8};
  c.switch_hidden = 8;
  c.head_hidden = {16, 8};
  c.bc_keypoints = 8;
  c.seed = 9;
  return c;
}

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / "han_test_eval" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace

TEST(Rollout, ExpertControllerSucceeds) {
  for (auto task : {sim::TaskId::kLifting, sim::TaskId::kStacking, sim::TaskId::kToolUsing}) {
    const auto r = rollout(expert_controller(task), task, sim::Region::kInterpolation, 3);
    EXPECT_TRUE(r.success) << sim::to_string(task);
    EXPECT_TRUE(r.failure.empty());
  }
}

TEST(Rollout, ExpertCellRateIsOne) {
  const auto c = run_cell([](std::uint64_t) { return expert_controller(sim::TaskId::kLifting); },
                          sim::TaskId::kLifting, sim::Region::kInterpolation, 30, 500);
  EXPECT_EQ(c.rollouts, 30);
  EXPECT_EQ(c.rate(), 1.0);
  EXPECT_EQ(c.seeds.size(), 30u);
  EXPECT_EQ(c.seeds[1], rollout_seed(500, 1));
}

TEST(Rollout, RandomPolicyRunsToMaxStepsWithoutFault) {
  const auto cam = sim::make_camera({});
  for (auto v : {policy::Variant::kHan, policy::Variant::kMlpAtn, policy::Variant::kNoRoi, policy::Variant::kNoCon,
                 policy::Variant::kBcImage, policy::Variant::kBcStates}) {
    policy::Policy<float> p(small_policy(v), cam);
    const auto r = rollout(policy_controller(p, 4), sim::TaskId::kStacking, sim::Region::kExtrapolation, 4, 25);
    EXPECT_TRUE(r.success || r.steps.size() == 25u) << policy::to_string(v);
    EXPECT_TRUE(r.failure.empty() || r.failure == "timeout") << r.failure;
    for (const auto& s : r.steps) {
      EXPECT_TRUE(s.x_ee.allFinite());
      for (double a : s.output.action) EXPECT_TRUE(std::isfinite(a));
    }
  }
}

TEST(Rollout, SameSeedAndCheckpointGiveIdenticalTrajectories) {
  const auto cam = sim::make_camera({});
  policy::Policy<float> p(small_policy(policy::Variant::kHan), cam);
  const auto a = rollout(policy_controller(p, 8), sim::TaskId::kLifting, sim::Region::kInterpolation, 8, 20);
  const auto b = rollout(policy_controller(p, 8), sim::TaskId::kLifting, sim::Region::kInterpolation, 8, 20);
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t t = 0; t < a.steps.size(); ++t) {
    EXPECT_EQ(a.steps[t].x_ee, b.steps[t].x_ee);
    EXPECT_EQ(a.steps[t].output.action, b.steps[t].output.action);
    EXPECT_EQ(a.steps[t].output.regions, b.steps[t].output.regions);
  }
  EXPECT_EQ(a.final_scene, b.final_scene);
}

TEST(Rollout, NonFiniteActionMarksFailure) {
  Controller bad = [](const sim::Scene&, const train::DemoFrame&) {
    policy::PolicyOutput o;
    o.action = {std::nan(""), 0, 0, -1};
    return o;
  };
  const auto r = rollout(bad, sim::TaskId::kLifting, sim::Region::kInterpolation, 1);
  EXPECT_FALSE(r.success);
  EXPECT_NE(r.failure.find("non_finite_action"), std::string::npos);
  EXPECT_EQ(r.steps.size(), 1u);
}

// ---- attention diagnostics ----------------------------------------------------

TEST(Attention, PinnedKeypointSwitchesAtTransition) {
  const std::vector<std::string> names{"cube", "plate"};
  const Eigen::Vector3d cube(0.0, 0.05, 0.02), plate(-0.05, -0.08, 0.005);
  std::vector<TraceStep> trace;
  for (int t = 0; t < 20; ++t) {
    TraceStep s;
    s.centers = {cube, plate};
    const bool held = t >= 12;
    s.label = stage_of(sim::TaskId::kStacking, names, held ? std::optional<int>(0) : std::nullopt, false);
    s.x_kp = held ? plate : cube;
    trace.push_back(s);
  }
  const auto rep = attention_diagnostics(names, trace);
  ASSERT_EQ(rep.switches.size(), 1u);
  EXPECT_EQ(rep.switches[0].transition_step, 12);
  EXPECT_EQ(rep.switches[0].switch_step, 12);
  EXPECT_TRUE(rep.switches[0].detected);
  EXPECT_EQ(rep.agreement(), 1.0);
  for (const auto& [name, st] : rep.stages) {
    EXPECT_GE(st.mean_target_distance, 0.0);
    EXPECT_TRUE(std::isfinite(st.mean_other_distance));
  }
}

TEST(Attention, LateSwitchIsNotDetected) {
  const std::vector<std::string> names{"cube", "plate"};
  const Eigen::Vector3d cube(0.0, 0.05, 0.02), plate(-0.05, -0.08, 0.005);
  std::vector<TraceStep> trace;
  for (int t = 0; t < 30; ++t) {
    TraceStep s;
    s.centers = {cube, plate};
    s.label = stage_of(sim::TaskId::kStacking, names, t >= 10 ? std::optional<int>(0) : std::nullopt, false);
    s.x_kp = t >= 16 ? plate : cube;
    trace.push_back(s);
  }
  const auto rep = attention_diagnostics(names, trace);
  EXPECT_EQ(rep.switches[0].switch_step, 16);
  EXPECT_FALSE(rep.switches[0].detected);
  EXPECT_NEAR(rep.stages.at("place_on_plate").agreement, 14.0 / 20.0, 1e-12);
}

TEST(Attention, ToolUsingStagesFollowAttachment) {
  const std::vector<std::string> names{"cube", "tool", "ring"};
  EXPECT_EQ(stage_of(sim::TaskId::kToolUsing, names, std::nullopt, false).target, "tool");
  EXPECT_EQ(stage_of(sim::TaskId::kToolUsing, names, 1, true).target, "cube");
  EXPECT_EQ(stage_of(sim::TaskId::kToolUsing, names, std::nullopt, true).stage, "grasp_cube");
  EXPECT_EQ(stage_of(sim::TaskId::kToolUsing, names, 0, true).target, "ring");
}

TEST(Attention, ArgmaxRegionInvariantUnderMonotoneLogitMap) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 2);
  for (int trial = 0; trial < 100; ++trial) {
    diff::Tensor<double> s({1, 6}), t({1, 6});
    for (int i = 0; i < 6; ++i) {
      s.data[i] = n(rng);
      t.data[i] = 3.0 * s.data[i] + 0.7;
    }
    diff::Var<double> cand(diff::Tensor<double>({6, 3}));
    policy::PolicyOutput a, b;
    a.confidences = policy::switch_attention(diff::Var<double>(s), cand).first.value().data;
    b.confidences = policy::switch_attention(diff::Var<double>(t), cand).first.value().data;
    EXPECT_EQ(a.argmax_confidence(), b.argmax_confidence());
  }
}

// ---- overlays ---------------------------------------------------------------------

TEST(Overlay, MarkerLandsOnProjectedPoint) {
  const auto cam = sim::make_camera({});
  img::RgbImage rgb(cam.height, cam.width, {0, 0, 0});
  policy::PolicyOutput o;
  const Eigen::Vector3d p(0.03, -0.07, 0.05);
  o.candidate_kps = {p};
  OverlayOptions opt;
  const auto im = overlay_frame(rgb, o, cam, 20, 26, opt);
  double sr = 0, sc = 0;
  int n = 0;
  for (int r = 0; r < im.height; ++r)
    for (int c = 0; c < im.width; ++c)
      if (im.at(r, c) == kKeypointColor) {
        sr += r;
        sc += c;
        ++n;
      }
  ASSERT_GT(n, 0);
  const auto px = geo::project(cam, geo::Point3::from(p, geo::Frame::kRobot));
  const auto [u, v] = upscaled_position(px.u, px.v, opt.scale);
  // Within one source pixel.
  EXPECT_LE(std::hypot(sr / n - u, sc / n - v), opt.scale);
}

TEST(Overlay, HighestConfidenceRegionDrawnRed) {
  const auto cam = sim::make_camera({});
  img::RgbImage rgb(cam.height, cam.width, {0, 0, 0});
  policy::PolicyOutput o;
  o.regions = {{0, 0}, {30, 40}, {10, 5}};
  o.confidences = {0.2, 0.7, 0.1};
  OverlayOptions opt;
  const auto im = overlay_frame(rgb, o, cam, 20, 26, opt);
  EXPECT_EQ(im.at(30 * opt.scale, 40 * opt.scale), kRegionColor);
  EXPECT_EQ(im.at((30 + 20) * opt.scale - 1, (40 + 26) * opt.scale - 1), kRegionColor);
  EXPECT_NE(im.at(0, 0), kRegionColor);
}

TEST(Overlay, OneImagePerStep) {
  const auto cam = sim::make_camera({});
  policy::Policy<float> p(small_policy(policy::Variant::kHan), cam);
  const auto r = rollout(policy_controller(p, 1), sim::TaskId::kLifting, sim::Region::kInterpolation, 1, 6);
  const auto dir = temp_dir("overlays");
  const auto paths = export_overlays(r, cam, 20, 26, dir);
  EXPECT_EQ(paths.size(), r.steps.size());
  for (const auto& path : paths) EXPECT_TRUE(std::filesystem::exists(path));
  const auto im = img::decode_png_rgb(io::read_file(paths[0]));
  EXPECT_EQ(im.width, cam.width * 4);
}

// ---- report -----------------------------------------------------------------------

TEST(Report, GridParsingAndErrors) {
  const auto g = grid_from_json(nlohmann::json::parse(
      R"({"cells":[{"ckpt":"a.ckpt","task":"stacking","regions":["extrapolation"],"rollouts":5,"seed":3}]})"));
  ASSERT_EQ(g.entries.size(), 1u);
  EXPECT_EQ(g.entries[0].task, sim::TaskId::kStacking);
  EXPECT_EQ(g.entries[0].regions.size(), 1u);
  EXPECT_THROW(grid_from_json(nlohmann::json::parse(R"({"cells":[]})")), ConfigError);
  EXPECT_THROW(grid_from_json(nlohmann::json::parse(R"({"cells":[{"ckpt":"a","task":"juggling"}]})")), ConfigError);
}

TEST(Report, EvaluateIsReproducibleFromSeeds) {
  const auto dir = temp_dir("report");
  const auto cam = sim::make_camera({});
  policy::Policy<float> p(small_policy(policy::Variant::kHan), cam);
  policy::save_model(dir + "/m.ckpt", p, {{"demos", 50}, {"source", "expert"}});
  Grid g;
  GridEntry e;
  e.checkpoint = dir + "/m.ckpt";
  e.rollouts = 3;
  g.entries.push_back(e);
  const auto a = evaluate(g), b = evaluate(g);
  ASSERT_EQ(a.cells.size(), 2u);
  auto ja = to_json(a), jb = to_json(b);
  for (auto* j : {&ja, &jb}) {
    (*j)["seconds"] = 0;
    for (auto& c : (*j)["cells"]) c["seconds"] = 0;
  }
  EXPECT_EQ(ja, jb);
  EXPECT_EQ(ja["cells"][0]["demos"], 50);
  EXPECT_EQ(ja["cells"][0]["label"], "50-expert");
  const auto table = format_table(a);
  EXPECT_NE(table.find("lifting/interp"), std::string::npos);
  EXPECT_NE(table.find("han (50-expert)"), std::string::npos);
}
