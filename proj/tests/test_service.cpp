#include <gtest/gtest.h>

#include <filesystem>
#include <thread>

#include "han/service/teleop.hpp"
#include "han/train/trainer.hpp"
#include "schema_check.hpp"

using namespace han;
using namespace han::service;
using nlohmann::json;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "han_test_service";
  std::filesystem::create_directories(dir);
  const auto p = dir / name;
  std::filesystem::remove_all(p);
  return p.string();
}

const json& protocol_schema() {
  static const json s = schema_check::load(HAN_SOURCE_DIR "/docs/protocol_v1.schema.json");
  return s;
}

void expect_conforms(const json& m, const char* side) {
  const auto& root = protocol_schema();
  const auto err = schema_check::check(root, root["$defs"][side], m);
  EXPECT_TRUE(err.empty()) << side << " message " << m.dump().substr(0, 200) << ": " << err;
}

json action_message(const train::ActionVec& a) {
  return {{"type", "action"}, {"delta", {a[0], a[1], a[2]}}, {"grip", a[3] > 0 ? "close" : "open"}};
}

/// Drives one episode over the wire with the stored actions of `demo`.
void replay_over_wire(Client& c, sim::TaskId task, const train::Demonstration& demo) {
  auto send = [&](const json& m) {
    expect_conforms(m, "client");
    auto r = c.request(m);
    expect_conforms(r, "server");
    return r;
  };
  auto r = send({{"type", "hello"},
                {"version", 1},
                {"task", sim::to_string(task)},
                {"seed", demo.seed},
                {"region", sim::to_string(demo.region)}});
  ASSERT_EQ(r["type"], "hello");
  r = send({{"type", "start"}});
  ASSERT_EQ(r["type"], "frame");
  ASSERT_EQ(r["step"], 0);
  for (std::size_t t = 0; t < demo.frames.size(); ++t) {
    EXPECT_FALSE(r["done"].get<bool>());
    r = send(action_message(demo.frames[t].action));
    ASSERT_EQ(r["type"], "frame") << r.dump();
    EXPECT_EQ(r["step"], t + 1);
  }
  EXPECT_TRUE(r["success"].get<bool>());
  EXPECT_TRUE(r["done"].get<bool>());
  r = send({{"type", "save"}});
  ASSERT_EQ(r["type"], "saved") << r.dump();
  EXPECT_EQ(r["frames"], demo.frames.size());
}

ServerOptions options(const std::string& out, sim::TaskId task = sim::TaskId::kLifting) {
  ServerOptions o;
  o.task = task;
  o.out = out;
  o.seed = 5;
  return o;
}

}  // namespace

TEST(Base64, KnownVectorsAndRoundTrip) {
  auto bytes = [](const std::string& s) { return std::vector<std::uint8_t>(s.begin(), s.end()); };
  EXPECT_EQ(base64_encode(bytes("")), "");
  EXPECT_EQ(base64_encode(bytes("f")), "Zg==");
  EXPECT_EQ(base64_encode(bytes("fo")), "Zm8=");
  EXPECT_EQ(base64_encode(bytes("foobar")), "Zm9vYmFy");
  std::mt19937 rng(1);
  for (int n = 0; n < 64; ++n) {
    std::vector<std::uint8_t> v(n);
    for (auto& b : v) b = static_cast<std::uint8_t>(rng());
    EXPECT_EQ(base64_decode(base64_encode(v)), v);
  }
  EXPECT_THROW(base64_decode("abc"), FormatError);
  EXPECT_THROW(base64_decode("ab!d"), FormatError);
  EXPECT_THROW(base64_decode("a=bc"), FormatError);
}

TEST(Session, MalformedMessageGetsErrorAndSessionContinues) {
  Session s(1, options(""));
  auto r = s.handle("{not json");
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0]["type"], "error");
  EXPECT_EQ(r[0]["code"], "malformed_json");
  expect_conforms(r[0], "server");
  EXPECT_EQ(s.handle(R"({"type":"start"})")[0]["code"], "hello_required");
  EXPECT_EQ(s.handle(R"({"type":"hello","version":2})")[0]["code"], "unsupported_version");
  EXPECT_EQ(s.handle(R"([1,2])")[0]["code"], "bad_message");
  EXPECT_EQ(s.handle(R"({"type":"hello","version":1})")[0]["type"], "hello");
  EXPECT_EQ(s.handle(R"({"type":"jump"})")[0]["code"], "unknown_type");
  EXPECT_EQ(s.handle(R"({"type":"action","delta":[0,0,0]})")[0]["code"], "no_episode");
  EXPECT_EQ(s.handle(R"({"type":"start"})")[0]["type"], "frame");
  EXPECT_EQ(s.handle(R"({"type":"action","delta":[0,0]})")[0]["code"], "bad_action");
  EXPECT_EQ(s.handle(R"({"type":"action","delta":["a",0,0]})")[0]["code"], "bad_message");
  EXPECT_EQ(s.handle(R"({"type":"action","grip":"squeeze"})")[0]["code"], "bad_action");
  // None of the rejected actions were recorded.
  const auto f = s.handle(R"({"type":"action","delta":[0.001,0,0]})")[0];
  EXPECT_EQ(f["step"], 1);
  expect_conforms(f, "server");
}

TEST(Session, RejectsOtherTask) {
  Session s(1, options(""));
  EXPECT_EQ(s.handle(R"({"type":"hello","version":1,"task":"stacking"})")[0]["code"], "wrong_task");
  EXPECT_EQ(s.handle(R"({"type":"hello","version":1,"task":"lifting"})")[0]["type"], "hello");
}

TEST(Session, ResetUsesNextSeed) {
  Session s(1, options(""));
  s.handle(R"({"type":"hello","version":1,"seed":40})");
  auto f = s.handle(R"({"type":"start"})")[0];
  EXPECT_EQ(f["seed"], 40);
  f = s.handle(R"({"type":"reset"})")[0];
  EXPECT_EQ(f["seed"], 41);
  EXPECT_EQ(f["step"], 0);
  const auto task = sim::make_task(sim::TaskId::kLifting);
  EXPECT_EQ(s.scene(), sim::reset(task, sim::Region::kInterpolation, 41));
}

TEST(Session, ActionsAreClippedAndGripToggles) {
  Session s(1, options(""));
  s.handle(R"({"type":"hello","version":1})");
  s.handle(R"({"type":"start"})");
  const auto x0 = s.scene().gripper.x_ee;
  auto f = s.handle(R"({"type":"action","delta":[1.0,0,0],"toggle":true})")[0];
  EXPECT_NEAR(f["x_ee"][0].get<double>() - x0.x(), 0.02, 1e-6);
  EXPECT_EQ(f["grip"], "closed");
  f = s.handle(R"({"type":"action","toggle":true})")[0];
  EXPECT_EQ(f["grip"], "open");
}

TEST(Session, UnsuccessfulSaveWarnsUnlessForced) {
  const auto path = temp_path("forced.handata");
  Session s(1, options(path));
  s.handle(R"({"type":"hello","version":1})");
  s.handle(R"({"type":"start"})");
  s.handle(R"({"type":"action","delta":[0,0,-0.01]})");
  s.handle(R"({"type":"action","delta":[0,0,-0.01]})");
  auto r = s.handle(R"({"type":"save"})")[0];
  EXPECT_EQ(r["type"], "warning");
  expect_conforms(r, "server");
  EXPECT_FALSE(std::filesystem::exists(path));
  r = s.handle(R"({"type":"save","force":true})")[0];
  EXPECT_EQ(r["type"], "saved");
  EXPECT_EQ(r["forced"], true);
  const auto ds = train::read_dataset(path);
  ASSERT_EQ(ds.demos.size(), 1u);
  EXPECT_EQ(ds.demos[0].source, train::Source::kHuman);
  EXPECT_EQ(ds.demos[0].metadata["forced"], true);
  EXPECT_EQ(s.handle(R"({"type":"discard"})")[0]["had_episode"], false);
}

TEST(Wire, ScriptedClientRecordsSameBytesAsCollect) {
  const auto ds = train::collect_demos(sim::TaskId::kLifting, sim::Region::kExtrapolation, 3, 21);
  const auto path = temp_path("wire.handata");
  TeleopServer server(options(path));
  const int port = server.start();
  for (const auto& demo : ds.demos) {
    Client c("127.0.0.1", port);
    replay_over_wire(c, ds.header.task, demo);
  }
  server.stop();
  EXPECT_EQ(server.saved(), 3);

  const auto bytes = io::read_file(path);
  const auto header = train::encode_header(ds.header);
  ASSERT_GE(bytes.size(), header.size());
  EXPECT_TRUE(std::equal(header.begin(), header.end(), bytes.begin()));
  auto got = train::decode_dataset(bytes);
  ASSERT_EQ(got.demos.size(), 3u);
  EXPECT_TRUE(train::replay(got).ok);
  for (std::size_t d = 0; d < 3; ++d) {
    auto human = got.demos[d];
    EXPECT_EQ(human.source, train::Source::kHuman);
    // Same record once provenance fields match.
    human.source = train::Source::kExpert;
    human.metadata = ds.demos[d].metadata;
    EXPECT_EQ(train::encode_demo(human), train::encode_demo(ds.demos[d])) << "demo " << d;
  }

  // The recorded file trains like a collected one.
  policy::PolicyConfig pc;
  pc.regions = 4;
  pc.backbone = {4, 8, 8, 8};
  pc.switch_hidden = 8;
  pc.head_hidden = {16, 8};
  policy::Policy<float> p(pc, got.header.camera());
  train::TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 8;
  const auto r = train::train_policy(p, got, tc);
  EXPECT_LT(r.epochs.back().mean_loss, r.epochs.front().mean_loss);
}

TEST(Wire, ConcurrentSessionsAppendToOneFile) {
  const auto ds = train::collect_demos(sim::TaskId::kStacking, sim::Region::kInterpolation, 3, 4);
  const auto path = temp_path("concurrent.handata");
  TeleopServer server(options(path, sim::TaskId::kStacking));
  const int port = server.start();
  std::vector<std::thread> clients;
  for (const auto& demo : ds.demos)
    clients.emplace_back([&, port] {
      Client c("127.0.0.1", port);
      replay_over_wire(c, ds.header.task, demo);
    });
  for (auto& t : clients) t.join();
  server.stop();
  const auto got = train::read_dataset(path);
  EXPECT_EQ(got.demos.size(), 3u);
  EXPECT_TRUE(train::replay(got).ok);
}

TEST(Wire, MalformedFrameKeepsConnection) {
  TeleopServer server(options(""));
  const int port = server.start();
  Client c("127.0.0.1", port);
  c.send_text("{\"type\":");
  EXPECT_EQ(c.recv()["code"], "malformed_json");
  EXPECT_EQ(c.request({{"type", "hello"}, {"version", 1}})["type"], "hello");
}

TEST(Wire, IdleClientPausesSession) {
  auto o = options("");
  o.idle_timeout_ms = 150;
  TeleopServer server(o);
  const int port = server.start();
  Client c("127.0.0.1", port);
  c.request({{"type", "hello"}, {"version", 1}});
  const auto f = c.request({{"type", "start"}});
  const auto m = c.recv(2000);
  EXPECT_EQ(m["type"], "paused");
  expect_conforms(m, "server");
  // Resumes where it was.
  const auto g = c.request({{"type", "action"}, {"delta", {0, 0, 0}}});
  EXPECT_EQ(g["step"], 1);
  EXPECT_EQ(g["seed"], f["seed"]);
}

TEST(Wire, FrameRoundTripRate) {
  TeleopServer server(options(""));
  const int port = server.start();
  Client c("127.0.0.1", port);
  c.request({{"type", "hello"}, {"version", 1}});
  c.request({{"type", "start"}});
  const int n = 60;
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < n; ++i) {
    const double dz = i % 2 ? 0.005 : -0.005;
    const auto f = c.request({{"type", "action"}, {"delta", {0, 0, dz}}});
    const auto png = base64_decode(f["rgb_png"].get<std::string>());
    const auto im = img::decode_png_rgb(png);
    ASSERT_EQ(im.width, 80);
  }
  const double hz = n / std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  RecordProperty("frame_hz", std::to_string(hz));
  EXPECT_GE(hz, 10.0);
}

TEST(Wire, OverlayFromPolicy) {
  auto o = options("");
  policy::PolicyConfig pc;
  pc.regions = 4;
  pc.backbone = {4, 8, 8, 8};
  pc.switch_hidden = 8;
  pc.head_hidden = {16, 8};
  o.overlay = std::make_shared<policy::Policy<float>>(pc, sim::make_camera(o.sim));
  Session s(1, o);
  s.handle(R"({"type":"hello","version":1})");
  const auto f = s.handle(R"({"type":"start"})")[0];
  ASSERT_TRUE(f.contains("overlay"));
  EXPECT_EQ(f["overlay"]["candidate_kps"].size(), 4u);
  expect_conforms(f, "server");
}
