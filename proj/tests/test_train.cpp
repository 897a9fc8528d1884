#include <gtest/gtest.h>

#include <filesystem>
#include <thread>

#include "han/train/collect.hpp"
#include "han/train/trainer.hpp"

using namespace han;
using namespace han::train;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "han_test_train";
  std::filesystem::create_directories(dir);
  const auto p = dir / name;
  std::filesystem::remove_all(p);
  return p.string();
}

const Dataset& lifting50() {
  static const Dataset ds = collect_demos(sim::TaskId::kLifting, sim::Region::kInterpolation, 50, 1);
  return ds;
}

policy::PolicyConfig small_policy(policy::Variant v) {
  policy::PolicyConfig c;
  c.variant = v;
  c.regions = 4;
  c.backbone = {4, 8, 8, 8};
  c.switch_hidden = 8;
  c.head_hidden = {32, 16};
  c.bc_keypoints = 8;
  c.seed = 3;
  return c;
}

}  // namespace

// ---- dataset ------------------------------------------------------------------

TEST(Collect, SingleDemoIsDeterministicAndSucceeds) {
  const auto a = collect_demos(sim::TaskId::kLifting, sim::Region::kInterpolation, 1, 42);
  const auto b = collect_demos(sim::TaskId::kLifting, sim::Region::kInterpolation, 1, 42);
  ASSERT_EQ(a.demos.size(), 1u);
  EXPECT_EQ(encode_dataset(a), encode_dataset(b));
  EXPECT_TRUE(replay(a).ok);
  EXPECT_GE(a.demos[0].frames.size(), 2u);
}

TEST(Collect, InitialPositionsInsideRequestedRegion) {
  const auto task = sim::make_task(sim::TaskId::kLifting);
  for (const auto& d : lifting50().demos) {
    const auto& cube = d.initial.object("cube");
    bool inside = false;
    for (const auto& r : task.objects[0].regions(sim::Region::kInterpolation))
      inside = inside || r.contains(cube.position.x(), cube.position.y());
    EXPECT_TRUE(inside);
  }
}

TEST(Collect, StoredActionsAreExecutedActions) {
  const auto& ds = lifting50();
  for (const auto& d : ds.demos)
    for (const auto& f : d.frames) {
      for (int j = 0; j < 3; ++j) EXPECT_LE(std::abs(f.action[j]), ds.header.sim.max_step);
      EXPECT_TRUE(f.action[3] == 1.0f || f.action[3] == -1.0f);
    }
}

TEST(Collect, AbortsWhenExpertMostlyFails) {
  CollectOptions opt;
  opt.sim.workspace_max.z() = 0.05;  // lift target out of reach
  try {
    collect_demos(sim::TaskId::kLifting, sim::Region::kInterpolation, 3, 1, opt);
    FAIL() << "expected abort";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("exceeds 50%"), std::string::npos) << e.what();
  }
}

TEST(Dataset, EncodeDecodeRoundTripIsByteExact) {
  const auto ds = collect_demos(sim::TaskId::kStacking, sim::Region::kExtrapolation, 2, 7);
  const auto bytes = encode_dataset(ds);
  const auto back = decode_dataset(bytes);
  EXPECT_EQ(encode_dataset(back), bytes);
  ASSERT_EQ(back.demos.size(), 2u);
  EXPECT_EQ(back.demos[1].frames[3].rgb, ds.demos[1].frames[3].rgb);
  EXPECT_EQ(back.demos[1].frames[3].depth, ds.demos[1].frames[3].depth);
  EXPECT_EQ(back.demos[1].initial, ds.demos[1].initial);
  EXPECT_EQ(back.header.camera(), ds.header.camera());
}

TEST(Dataset, ReplayIsBitExactForEveryTaskAndRegion) {
  for (auto task : {sim::TaskId::kLifting, sim::TaskId::kStacking, sim::TaskId::kToolUsing})
    for (auto region : {sim::Region::kInterpolation, sim::Region::kExtrapolation}) {
      const auto ds = decode_dataset(encode_dataset(collect_demos(task, region, 4, 11)));
      const auto r = replay(ds);
      EXPECT_TRUE(r.ok) << sim::to_string(task) << " demo " << r.demo << " frame " << r.frame << " " << r.message;
    }
}

TEST(Dataset, TamperedActionBreaksReplay) {
  auto ds = collect_demos(sim::TaskId::kLifting, sim::Region::kInterpolation, 2, 5);
  auto& a = ds.demos[1].frames[2].action[0];
  a += a > 0 ? -0.005f : 0.005f;
  const auto r = replay(ds);
  EXPECT_FALSE(r.ok);
  EXPECT_EQ(r.demo, 1);
  EXPECT_EQ(r.frame, 3);
}

TEST(Dataset, RejectsBadMagicAndTruncation) {
  auto bytes = encode_dataset(collect_demos(sim::TaskId::kLifting, sim::Region::kInterpolation, 1, 5));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_dataset(bad), FormatError);
  bytes.resize(bytes.size() - 10);
  EXPECT_THROW(decode_dataset(bytes), FormatError);
  EXPECT_THROW(decode_dataset({}), FormatError);
}

TEST(Dataset, AppendWritesHeaderOnceAndChecksIt) {
  const auto path = temp_path("append.handata");
  const auto ds = collect_demos(sim::TaskId::kLifting, sim::Region::kInterpolation, 3, 9);
  for (const auto& d : ds.demos) append_demo(path, ds.header, d);
  EXPECT_EQ(io::read_file(path), encode_dataset(ds));
  DatasetHeader other = ds.header;
  other.task = sim::TaskId::kStacking;
  EXPECT_THROW(append_demo(path, other, ds.demos[0]), ConfigError);
}

TEST(Dataset, ConcurrentAppendsStayWellFormed) {
  const auto path = temp_path("concurrent.handata");
  const auto ds = collect_demos(sim::TaskId::kLifting, sim::Region::kInterpolation, 4, 13);
  std::vector<std::thread> writers;
  for (int w = 0; w < 4; ++w)
    writers.emplace_back([&, w] {
      for (int k = 0; k < 3; ++k) append_demo(path, ds.header, ds.demos[w]);
    });
  for (auto& t : writers) t.join();
  const auto back = read_dataset(path);
  EXPECT_EQ(back.demos.size(), 12u);
  EXPECT_TRUE(replay(back).ok);
}

TEST(Dataset, HeaderRecordsCameraAndConventions) {
  const auto j = lifting50().header.to_json();
  EXPECT_EQ(j["version"], 1);
  EXPECT_EQ(j["camera"]["width"], 80);
  EXPECT_TRUE(j["conventions"].contains("camera_frame"));
  EXPECT_EQ(j["fingerprint"].get<std::string>().size(), 16u);
}

// ---- training -------------------------------------------------------------------

TEST(Train, ScaledLossMatchesManualScaling) {
  TrainConfig cfg;
  cfg.loss_position_scale = 50;
  cfg.lambda = 0.1;
  diff::Var<double> a(diff::Tensor<double>({1, 4}, {0.01, -0.02, 0.0, 0.5}));
  diff::Tensor<double> t({1, 4}, {0.02, -0.02, 0.01, 1.0});
  diff::Var<double> as(diff::Tensor<double>({1, 4}, {0.5, -1.0, 0.0, 0.5}));
  diff::Tensor<double> ts({1, 4}, {1.0, -1.0, 0.5, 1.0});
  EXPECT_NEAR(scaled_bc_loss(a, t, cfg).item(), bc_loss(as, ts, 0.1).item(), 1e-12);
}

TEST(Train, MemorizesSingleFrame) {
  const auto& ds = lifting50();
  const auto samples = make_samples(ds);
  for (auto v : {policy::Variant::kBcImage, policy::Variant::kBcStates}) {
    policy::Policy<float> p(small_policy(v), ds.header.camera());
    TrainConfig cfg;
    cfg.lambda = 0;
    cfg.batch_size = 1;
    cfg.epochs = 1500;
    const auto r = train_samples(p, {samples[5]}, cfg);
    EXPECT_LT(r.step_losses.back(), 1e-4) << policy::to_string(v);
  }
}

TEST(Train, FixedSeedGivesBitIdenticalLossCurve) {
  Dataset ds = lifting50();
  ds.demos.resize(5);
  auto run = [&] {
    policy::Policy<float> p(small_policy(policy::Variant::kHan), ds.header.camera());
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 77;
    return train_policy(p, ds, cfg).step_losses;
  };
  const auto a = run(), b = run();
  ASSERT_FALSE(a.empty());
  EXPECT_EQ(a, b);
}

TEST(Train, WritesMetricsAndCheckpoints) {
  Dataset ds = lifting50();
  ds.demos.resize(3);
  const auto dir = temp_path("run");
  policy::Policy<float> p(small_policy(policy::Variant::kHan), ds.header.camera());
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.eval_every = 1;
  TrainHooks hooks;
  hooks.out_dir = dir;
  int calls = 0;
  hooks.evaluate = [&](const policy::Policy<float>&, int epoch) {
    ++calls;
    return nlohmann::json{{"success", epoch == 1 ? 0.5 : 0.25}};
  };
  const auto r = train_policy(p, ds, cfg, hooks);
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(r.best_epoch, 1);
  std::ifstream in(dir + "/metrics.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("mean_loss"));
    ++lines;
  }
  EXPECT_EQ(lines, 2);
  const auto loaded = policy::load_model<float>(dir + "/final.ckpt");
  for (std::size_t k = 0; k < p.params().size(); ++k)
    EXPECT_EQ(loaded.params().items()[k].var.value().data, p.params().items()[k].var.value().data);
  const auto meta = policy::read_model_meta(dir + "/best.ckpt");
  EXPECT_EQ(meta["epoch"], 1);
  EXPECT_EQ(meta["demos"], 3);
}

TEST(Train, NonFiniteLossAbortsWithLastGoodCheckpoint) {
  Dataset ds = lifting50();
  ds.demos.resize(2);
  const auto dir = temp_path("nan_run");
  policy::Policy<float> p(small_policy(policy::Variant::kBcStates), ds.header.camera());
  p.params().items()[0].var.mutable_value().data[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  TrainHooks hooks;
  hooks.out_dir = dir;
  EXPECT_THROW(train_policy(p, ds, cfg, hooks), NumericError);
  EXPECT_TRUE(std::filesystem::exists(dir + "/last_good.ckpt"));
}

TEST(Train, RejectsEmptyDatasetAndBadConfig) {
  policy::Policy<float> p(small_policy(policy::Variant::kHan), lifting50().header.camera());
  Dataset empty;
  empty.header = lifting50().header;
  EXPECT_THROW(train_policy(p, empty, {}), ConfigError);
  TrainConfig bad;
  bad.lambda = -1;
  EXPECT_THROW(train_policy(p, lifting50(), bad), ConfigError);
}
