#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "han/core/binary_io.hpp"
#include "han/image/png.hpp"
#include "han/sim/scene_json.hpp"
#include "han/sim/simulator.hpp"

namespace han::train {

inline constexpr std::string_view kDatasetMagic = "HANDATA1";
inline constexpr int kDatasetVersion = 1;

enum class Source { kExpert, kHuman };

inline const char* to_string(Source s) { return s == Source::kExpert ? "expert" : "human"; }

inline Source parse_source(const std::string& s) {
  if (s == "expert") return Source::kExpert;
  if (s == "human") return Source::kHuman;
  throw ConfigError("unknown source '" + s + "' (valid: expert, human)");
}

/// a* = (dx, dy, dz, grip) with grip +1 for close and -1 for open.
using ActionVec = std::array<float, 4>;

inline ActionVec to_action_vec(const sim::Action& a) {
  return {a.delta[0], a.delta[1], a.delta[2], a.grip == sim::Grip::kClose ? 1.0f : -1.0f};
}

inline sim::Action to_sim_action(const ActionVec& a) {
  sim::Action out;
  for (int j = 0; j < 3; ++j) out.delta[j] = a[j];
  out.grip = a[3] > 0 ? sim::Grip::kClose : sim::Grip::kOpen;
  return out;
}

struct DemoFrame {
  img::RgbImage rgb;
  img::DepthMm depth;
  Eigen::Vector3d x_ee = Eigen::Vector3d::Zero();
  bool fingers_closed = false;
  ActionVec action{0, 0, 0, -1};
};

struct Demonstration {
  sim::Region region = sim::Region::kInterpolation;
  Source source = Source::kExpert;
  std::uint64_t seed = 0;
  nlohmann::json metadata = nlohmann::json::object();  // free-form: collection flags, notes
  sim::Scene initial;
  std::vector<DemoFrame> frames;

  void validate() const {
    if (frames.size() < 2) throw ConfigError("demonstration needs at least 2 frames");
    for (const auto& f : frames)
      for (float v : f.action)
        if (!std::isfinite(v)) throw NumericError("demonstration holds a non-finite action");
  }
};

/// Everything a trainer or replayer needs besides the demos. Two datasets with
/// equal headers are interchangeable.
struct DatasetHeader {
  sim::TaskId task = sim::TaskId::kLifting;
  sim::SimConfig sim;

  geo::CameraModel camera() const { return sim::make_camera(sim); }
  std::string fingerprint() const;
  nlohmann::json to_json() const;
  static DatasetHeader from_json(const nlohmann::json& j);
};

struct Dataset {
  DatasetHeader header;
  std::vector<Demonstration> demos;

  std::size_t frame_count() const {
    std::size_t n = 0;
    for (const auto& d : demos) n += d.frames.size();
    return n;
  }
};

inline std::string DatasetHeader::fingerprint() const {
  // FNV-1a over the canonical config dump.
  const std::string text = nlohmann::json{{"task", sim::to_string(task)}, {"sim", sim::to_json(sim)}}.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline nlohmann::json DatasetHeader::to_json() const {
  return {{"version", kDatasetVersion},
          {"task", sim::to_string(task)},
          {"sim", sim::to_json(sim)},
          {"camera", sim::to_json(camera())},
          {"fingerprint", fingerprint()},
          {"conventions",
           {{"robot_frame", "x toward camera, z up, table top at z=0, meters"},
            {"camera_frame", "+Z forward, +X right (col), +Y down (row)"},
            {"depth", "uint16 millimeters along camera Z"},
            {"action", "float32 dx, dy, dz in meters then grip (+1 close, -1 open)"},
            {"grip_state", "uint8 1 if fingers closed"}}}};
}

inline DatasetHeader DatasetHeader::from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != kDatasetVersion)
      throw FormatError("unsupported dataset version " + j.at("version").dump());
    DatasetHeader h;
    h.task = sim::parse_task(j.at("task").get<std::string>());
    h.sim = sim::sim_config_from_json(j.at("sim"));
    if (!(sim::camera_from_json(j.at("camera")) == h.camera()))
      throw FormatError("dataset camera does not match its sim config");
    if (j.at("fingerprint").get<std::string>() != h.fingerprint()) throw FormatError("dataset fingerprint mismatch");
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed dataset header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad dataset header: ") + e.what());
  }
}

/// magic | str header JSON
inline std::vector<std::uint8_t> encode_header(const DatasetHeader& h) {
  io::ByteWriter w;
  w.raw(kDatasetMagic);
  w.str(h.to_json().dump());
  return w.take();
}

/// str metadata JSON | str initial scene JSON | u32 T |
/// T x (f64 x3 x_ee | u8 grip | f32 x4 action | blob rgb PNG | blob depth PNG)
inline std::vector<std::uint8_t> encode_demo(const Demonstration& d) {
  d.validate();
  nlohmann::json meta = d.metadata;
  meta["region"] = sim::to_string(d.region);
  meta["source"] = to_string(d.source);
  meta["seed"] = d.seed;
  meta["length"] = d.frames.size();
  io::ByteWriter w;
  w.str(meta.dump());
  w.str(sim::to_json(d.initial).dump());
  w.u32(static_cast<std::uint32_t>(d.frames.size()));
  for (const auto& f : d.frames) {
    for (int j = 0; j < 3; ++j) w.f64(f.x_ee[j]);
    w.u8(f.fingers_closed ? 1 : 0);
    for (float v : f.action) w.f32(v);
    w.blob(img::encode_png(f.rgb));
    w.blob(img::encode_png(f.depth));
  }
  return w.take();
}

inline Demonstration decode_demo(io::ByteReader& r, const DatasetHeader& h) {
  Demonstration d;
  try {
    d.metadata = nlohmann::json::parse(r.str());
    d.region = sim::parse_region(d.metadata.at("region").get<std::string>());
    d.source = parse_source(d.metadata.at("source").get<std::string>());
    d.seed = d.metadata.at("seed").get<std::uint64_t>();
    d.initial = sim::scene_from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed demo record: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad demo record: ") + e.what());
  }
  if (d.initial.task != h.task) throw FormatError("demo task differs from dataset task");
  const std::uint32_t T = r.u32();
  d.frames.resize(T);
  for (auto& f : d.frames) {
    for (int j = 0; j < 3; ++j) f.x_ee[j] = r.f64();
    const std::uint8_t grip = r.u8();
    if (grip > 1) throw FormatError("bad grip state byte");
    f.fingers_closed = grip == 1;
    for (auto& v : f.action) v = r.f32();
    f.rgb = img::decode_png_rgb(r.blob());
    f.depth = img::decode_png_depth(r.blob());
    if (f.rgb.height != h.sim.height || f.rgb.width != h.sim.width || f.depth.height != h.sim.height ||
        f.depth.width != h.sim.width)
      throw FormatError("frame resolution differs from dataset header");
  }
  try {
    d.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("invalid demo record: ") + e.what());
  }
  return d;
}

/// Reads the header then demo records until end of file.
inline Dataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  if (bytes.size() < kDatasetMagic.size() || r.raw(kDatasetMagic.size()) != kDatasetMagic)
    throw FormatError("not a HANDATA1 dataset");
  Dataset ds;
  try {
    ds.header = DatasetHeader::from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed dataset header: ") + e.what());
  }
  while (!r.done()) ds.demos.push_back(decode_demo(r, ds.header));
  return ds;
}

inline Dataset read_dataset(const std::string& path) { return decode_dataset(io::read_file(path)); }

inline std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  auto bytes = encode_header(ds.header);
  for (const auto& d : ds.demos) {
    const auto rec = encode_demo(d);
    bytes.insert(bytes.end(), rec.begin(), rec.end());
  }
  return bytes;
}

inline void write_dataset(const std::string& path, const Dataset& ds) { io::write_file(path, encode_dataset(ds)); }

namespace detail {

class LockedFile {
 public:
  explicit LockedFile(const std::string& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw FormatError("cannot open " + path + ": " + std::strerror(errno));
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw FormatError("cannot lock " + path);
    }
  }
  ~LockedFile() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  LockedFile(const LockedFile&) = delete;
  LockedFile& operator=(const LockedFile&) = delete;

  off_t size() const {
    struct stat st {};
    if (::fstat(fd_, &st) != 0) throw FormatError("cannot stat " + path_);
    return st.st_size;
  }
  std::vector<std::uint8_t> read_prefix(std::size_t n) const {
    std::vector<std::uint8_t> out(n);
    std::size_t got = 0;
    while (got < n) {
      const ssize_t k = ::pread(fd_, out.data() + got, n - got, static_cast<off_t>(got));
      if (k <= 0) throw FormatError("short read from " + path_);
      got += static_cast<std::size_t>(k);
    }
    return out;
  }
  void append(const std::vector<std::uint8_t>& bytes) {
    if (::lseek(fd_, 0, SEEK_END) < 0) throw FormatError("cannot seek " + path_);
    std::size_t done = 0;
    while (done < bytes.size()) {
      const ssize_t k = ::write(fd_, bytes.data() + done, bytes.size() - done);
      if (k <= 0) throw FormatError("write failed for " + path_);
      done += static_cast<std::size_t>(k);
    }
    ::fsync(fd_);
  }

 private:
  std::string path_;
  int fd_ = -1;
};

}  // namespace detail

/// Appends one demo under an exclusive lock, writing the header first if the
/// file is new. An existing file must carry an identical header.
inline void append_demo(const std::string& path, const DatasetHeader& header, const Demonstration& demo) {
  const auto record = encode_demo(demo);
  const auto head = encode_header(header);
  detail::LockedFile f(path);
  const off_t size = f.size();
  if (size == 0) {
    auto bytes = head;
    bytes.insert(bytes.end(), record.begin(), record.end());
    f.append(bytes);
    return;
  }
  if (static_cast<std::size_t>(size) < head.size() || f.read_prefix(head.size()) != head)
    throw ConfigError("dataset " + path + " has a different header (task or sim config)");
  f.append(record);
}

/// Object base positions in scene order; the pose input of the state-based baseline.
inline std::vector<Eigen::Vector3d> object_positions(const sim::Scene& s) {
  std::vector<Eigen::Vector3d> out;
  for (const auto& o : s.objects) out.push_back(o.position);
  return out;
}

struct ReplayResult {
  bool ok = true;
  int demo = -1;
  int frame = -1;  // first mismatching frame, or T for a final-state failure
  std::string message;
};

/// Steps the simulator from each demo's initial scene with the stored actions.
/// Every stored x_ee and grip state must match bit-exactly and the final state
/// must satisfy the task predicate. `on_scene` sees the scene at each frame.
template <typename Fn>
ReplayResult replay(const Dataset& ds, Fn&& on_scene) {
  const auto task = sim::make_task(ds.header.task);
  for (std::size_t d = 0; d < ds.demos.size(); ++d) {
    const auto& demo = ds.demos[d];
    sim::Scene s = demo.initial;
    for (std::size_t t = 0; t < demo.frames.size(); ++t) {
      const auto& f = demo.frames[t];
      const bool closed = s.gripper.fingers == sim::Fingers::kClosed;
      if (!(s.gripper.x_ee.array() == f.x_ee.array()).all() || closed != f.fingers_closed)
        return {false, static_cast<int>(d), static_cast<int>(t), "state mismatch"};
      on_scene(d, t, s);
      s = sim::step(task, s, to_sim_action(f.action), ds.header.sim);
    }
    if (!sim::success(task, s))
      return {false, static_cast<int>(d), static_cast<int>(demo.frames.size()), "final state does not succeed"};
  }
  return {};
}

inline ReplayResult replay(const Dataset& ds) {
  return replay(ds, [](std::size_t, std::size_t, const sim::Scene&) {});
}

}  // namespace han::train
