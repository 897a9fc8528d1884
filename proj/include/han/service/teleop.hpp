#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <memory>
#include <mutex>
#include <random>
#include <thread>

#include "han/policy/policy.hpp"
#include "han/service/wire.hpp"
#include "han/train/collect.hpp"

namespace han::service {

struct ServerOptions {
  sim::TaskId task = sim::TaskId::kLifting;
  sim::Region region = sim::Region::kInterpolation;
  sim::SimConfig sim;
  std::string out;           // dataset file demos are appended to
  std::uint64_t seed = 0;    // first scene seed of session 1
  int port = 0;              // 0: pick a free port
  std::string bind = "127.0.0.1";
  int idle_timeout_ms = 30000;
  nlohmann::json metadata = nlohmann::json::object();  // copied into every saved demo
  std::shared_ptr<const policy::Policy<float>> overlay;  // optional, adds PolicyOutput to frames
  bool verbose = false;
};

inline nlohmann::json error_message(const std::string& code, const std::string& message) {
  return {{"type", "error"}, {"code", code}, {"message", message}};
}

/// Protocol state for one connection. Owns its scene; replies are returned,
/// not sent, so the loop that drives it can be a socket or a test.
class Session {
 public:
  Session(int id, const ServerOptions& opt)
      : id_(id),
        opt_(opt),
        task_(sim::make_task(opt.task)),
        cam_(sim::make_camera(opt.sim)),
        region_(opt.region),
        seed_(opt.seed + 1000003ull * static_cast<std::uint64_t>(id - 1)),
        overlay_rng_(opt.seed ^ static_cast<std::uint64_t>(id)) {
    opt_.sim.validate();
  }

  std::vector<nlohmann::json> handle(const std::string& text) {
    nlohmann::json m;
    try {
      m = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      return {error_message("malformed_json", e.what())};
    }
    if (!m.is_object() || !m.contains("type") || !m["type"].is_string())
      return {error_message("bad_message", "message must be an object with a string \"type\"")};
    try {
      return dispatch(m);
    } catch (const nlohmann::json::exception& e) {
      return {error_message("bad_message", e.what())};
    } catch (const ConfigError& e) {
      return {error_message("rejected", e.what())};
    } catch (const FormatError& e) {
      return {error_message("rejected", e.what())};
    } catch (const NumericError& e) {
      return {error_message("rejected", e.what())};
    }
  }

  int id() const { return id_; }
  std::uint64_t seed() const { return seed_; }
  bool recording() const { return active_; }
  const sim::Scene& scene() const { return scene_; }
  int saved() const { return saved_; }

 private:
  std::vector<nlohmann::json> dispatch(const nlohmann::json& m) {
    const auto type = m["type"].get<std::string>();
    if (type == "hello") return {hello(m)};
    if (!greeted_) return {error_message("hello_required", "send hello first")};
    if (type == "start") return {begin()};
    if (type == "reset") {
      ++seed_;
      return {begin()};
    }
    if (type == "action") return {act(m)};
    if (type == "save") return {save(m)};
    if (type == "discard") {
      const bool had = active_;
      active_ = false;
      return {{{"type", "discarded"}, {"episode", episode_}, {"had_episode", had}}};
    }
    return {error_message("unknown_type", "unknown message type \"" + type + "\"")};
  }

  nlohmann::json hello(const nlohmann::json& m) {
    const int version = m.value("version", 0);
    if (version != kProtocolVersion)
      return error_message("unsupported_version", "server speaks protocol version " + std::to_string(kProtocolVersion));
    if (m.contains("region")) region_ = sim::parse_region(m["region"].get<std::string>());
    if (m.contains("seed")) seed_ = m["seed"].get<std::uint64_t>();
    if (m.contains("task") && sim::parse_task(m["task"].get<std::string>()) != task_.id)
      return error_message("wrong_task", std::string("this server records ") + sim::to_string(task_.id));
    greeted_ = true;
    return {{"type", "hello"},
            {"version", kProtocolVersion},
            {"session", id_},
            {"task", sim::to_string(task_.id)},
            {"region", sim::to_string(region_)},
            {"seed", seed_},
            {"max_step", opt_.sim.max_step},
            {"max_steps", task_.max_steps},
            {"camera", sim::to_json(cam_)}};
  }

  nlohmann::json begin() {
    scene_ = sim::reset(task_, region_, seed_, opt_.sim);
    demo_ = {};
    demo_.region = region_;
    demo_.source = train::Source::kHuman;
    demo_.seed = seed_;
    demo_.initial = scene_;
    grip_ = sim::Grip::kOpen;
    active_ = true;
    done_ = false;
    ++episode_;
    return frame();
  }

  nlohmann::json frame() {
    obs_ = train::observe(scene_, cam_, opt_.sim);
    const auto& g = scene_.gripper;
    nlohmann::json j{{"type", "frame"},
                     {"episode", episode_},
                     {"seed", seed_},
                     {"step", static_cast<int>(demo_.frames.size())},
                     {"width", obs_.rgb.width},
                     {"height", obs_.rgb.height},
                     {"rgb_png", base64_encode(img::encode_png(obs_.rgb))},
                     {"x_ee", {g.x_ee.x(), g.x_ee.y(), g.x_ee.z()}},
                     {"grip", sim::to_string(g.fingers)},
                     {"attached", g.attached ? nlohmann::json(scene_.by_id(*g.attached).name) : nlohmann::json()},
                     {"success", sim::success(task_, scene_)},
                     {"done", done_}};
    if (opt_.overlay) {
      policy::PolicyInput in;
      in.rgb = &obs_.rgb;
      in.depth = &obs_.depth;
      in.x_ee = obs_.x_ee;
      in.fingers_closed = obs_.fingers_closed;
      in.object_positions = train::object_positions(scene_);
      j["overlay"] = policy::to_json(opt_.overlay->act(in, overlay_rng_));
    }
    return j;
  }

  nlohmann::json act(const nlohmann::json& m) {
    if (!active_) return error_message("no_episode", "send start or reset first");
    if (done_) return error_message("episode_over", "episode finished; save, discard or reset");
    sim::Action a;
    if (m.contains("delta")) {
      const auto& d = m["delta"];
      if (!d.is_array() || d.size() != 3) return error_message("bad_action", "delta must be 3 numbers");
      for (int i = 0; i < 3; ++i) {
        const double v = d[i].get<double>();
        if (!std::isfinite(v)) return error_message("bad_action", "delta must be finite");
        const auto lim = static_cast<float>(opt_.sim.max_step);
        a.delta[i] = std::clamp(static_cast<float>(v), -lim, lim);
      }
    }
    sim::Grip grip = grip_;
    if (m.value("toggle", false)) grip = grip == sim::Grip::kClose ? sim::Grip::kOpen : sim::Grip::kClose;
    if (m.contains("grip")) {
      const auto g = m["grip"].get<std::string>();
      if (g != "open" && g != "close") return error_message("bad_action", "grip must be \"open\" or \"close\"");
      grip = g == "close" ? sim::Grip::kClose : sim::Grip::kOpen;
    }
    grip_ = grip;
    a.grip = grip_;
    train::DemoFrame f = std::move(obs_);
    f.action = train::to_action_vec(a);
    demo_.frames.push_back(std::move(f));
    scene_ = sim::step(task_, scene_, a, opt_.sim);
    done_ = (sim::success(task_, scene_) && demo_.frames.size() >= 2) ||
            static_cast<int>(demo_.frames.size()) >= task_.max_steps;
    return frame();
  }

  nlohmann::json save(const nlohmann::json& m) {
    if (!active_) return error_message("no_episode", "nothing to save");
    const bool ok = sim::success(task_, scene_);
    const bool force = m.value("force", false);
    if (!ok && !force)
      return {{"type", "warning"},
              {"code", "not_successful"},
              {"message", "episode does not satisfy the success predicate; resend save with force=true to keep it"}};
    if (opt_.out.empty()) return error_message("no_output", "server has no dataset file");
    demo_.metadata = opt_.metadata;
    demo_.metadata["session"] = id_;
    demo_.metadata["forced"] = !ok;
    demo_.validate();
    train::append_demo(opt_.out, train::DatasetHeader{task_.id, opt_.sim}, demo_);
    active_ = false;
    ++saved_;
    if (opt_.verbose)
      std::fprintf(stderr, "session %d saved episode %d (%zu frames)%s\n", id_, episode_, demo_.frames.size(),
                   ok ? "" : " [forced]");
    return {{"type", "saved"},
            {"episode", episode_},
            {"frames", demo_.frames.size()},
            {"success", ok},
            {"forced", !ok},
            {"path", opt_.out}};
  }

  int id_;
  ServerOptions opt_;
  sim::TaskSpec task_;
  geo::CameraModel cam_;
  sim::Region region_;
  std::uint64_t seed_;
  std::mt19937_64 overlay_rng_;
  bool greeted_ = false, active_ = false, done_ = false;
  int episode_ = 0, saved_ = 0;
  sim::Scene scene_;
  sim::Grip grip_ = sim::Grip::kOpen;
  train::Demonstration demo_;
  train::DemoFrame obs_;
};

/// Accepts connections and runs one Session per connection on its own thread.
class TeleopServer {
 public:
  explicit TeleopServer(ServerOptions opt) : opt_(std::move(opt)) {}
  ~TeleopServer() { stop(); }
  TeleopServer(const TeleopServer&) = delete;
  TeleopServer& operator=(const TeleopServer&) = delete;

  /// Binds and starts accepting; returns the bound port.
  int start() {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw WireError("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(opt_.port));
    if (::inet_pton(AF_INET, opt_.bind.c_str(), &addr.sin_addr) != 1) throw ConfigError("bad bind address " + opt_.bind);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(listen_fd_, 16) < 0) {
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw WireError("cannot listen on " + opt_.bind + ":" + std::to_string(opt_.port) + ": " + std::strerror(errno));
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    acceptor_ = std::thread([this] { accept_loop(); });
    return port_;
  }

  int port() const { return port_; }

  void stop() {
    if (stopping_.exchange(true)) return;
    if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
    if (acceptor_.joinable()) acceptor_.join();
    {
      std::lock_guard lock(mu_);
      for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : workers_) t.join();
    workers_.clear();
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;
  }

  int saved() const { return saved_.load(); }

 private:
  void accept_loop() {
    int next_id = 1;
    while (!stopping_) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR || errno == ECONNABORTED) continue;
        return;
      }
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      std::lock_guard lock(mu_);
      if (stopping_) {
        ::close(fd);
        return;
      }
      open_fds_.push_back(fd);
      workers_.emplace_back([this, fd, id = next_id++] { serve(fd, id); });
    }
  }

  void serve(int fd, int id) {
    try {
      Session s(id, opt_);
      bool paused = false;
      int counted = 0;
      std::string text;
      while (!stopping_) {
        const auto st = recv_raw(fd, text, opt_.idle_timeout_ms);
        if (st == RecvStatus::kClosed) break;
        if (st == RecvStatus::kTimeout) {
          // The scene and recording stay as they are until the client returns.
          if (!paused) send_message(fd, {{"type", "paused"}, {"reason", "idle timeout"}});
          paused = true;
          continue;
        }
        paused = false;
        for (const auto& reply : s.handle(text)) send_message(fd, reply);
        saved_ += s.saved() - counted;
        counted = s.saved();
      }
    } catch (const std::exception& e) {
      if (opt_.verbose) std::fprintf(stderr, "session %d closed: %s\n", id, e.what());
    }
    std::lock_guard lock(mu_);
    std::erase(open_fds_, fd);
    ::close(fd);
  }

  ServerOptions opt_;
  int listen_fd_ = -1, port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<int> saved_{0};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::thread> workers_;
  std::vector<int> open_fds_;
};

}  // namespace han::service
