#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include "han/eval/attention.hpp"
#include "han/policy/model_io.hpp"

namespace han::eval {

/// One checkpoint evaluated on one task over some regions.
struct GridEntry {
  std::string checkpoint;
  sim::TaskId task = sim::TaskId::kLifting;
  std::vector<sim::Region> regions{sim::Region::kInterpolation, sim::Region::kExtrapolation};
  int rollouts = 30;
  std::uint64_t seed = 1000;
  std::string label;  // row label, e.g. "50-Expert"; defaults to checkpoint metadata
};

struct Grid {
  std::vector<GridEntry> entries;
};

inline Grid grid_from_json(const nlohmann::json& j) {
  Grid g;
  try {
    for (const auto& e : j.at("cells")) {
      GridEntry ge;
      ge.checkpoint = e.at("ckpt").get<std::string>();
      ge.task = sim::parse_task(e.at("task").get<std::string>());
      if (e.contains("regions")) {
        ge.regions.clear();
        for (const auto& r : e["regions"]) ge.regions.push_back(sim::parse_region(r.get<std::string>()));
      }
      if (e.contains("rollouts")) ge.rollouts = e["rollouts"].get<int>();
      if (e.contains("seed")) ge.seed = e["seed"].get<std::uint64_t>();
      if (e.contains("label")) ge.label = e["label"].get<std::string>();
      if (ge.rollouts < 1) throw ConfigError("rollouts must be >= 1");
      g.entries.push_back(std::move(ge));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed eval grid: ") + e.what());
  }
  if (g.entries.empty()) throw ConfigError("eval grid has no cells");
  return g;
}

struct ReportCell {
  std::string variant, label, checkpoint;
  sim::TaskId task = sim::TaskId::kLifting;
  sim::Region region = sim::Region::kInterpolation;
  int demos = 0;
  CellResult result;
  std::optional<double> max_during_training;
  nlohmann::json attention;  // aggregated over successful rollouts; null if no keypoints
};

struct EvalReport {
  std::vector<ReportCell> cells;
  double seconds = 0;
};

/// Best rate for `region` logged by the trainer next to the checkpoint, if any.
inline std::optional<double> max_logged_rate(const std::string& ckpt, sim::Region region) {
  const auto metrics = std::filesystem::path(ckpt).parent_path() / "metrics.jsonl";
  std::ifstream in(metrics);
  if (!in) return std::nullopt;
  std::optional<double> best;
  std::string line;
  while (std::getline(in, line)) {
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.contains("eval")) continue;
      const auto& e = j["eval"];
      const char* key = sim::to_string(region);
      if (e.contains(key) && e[key].is_number()) best = std::max(best.value_or(0.0), e[key].get<double>());
    } catch (const nlohmann::json::exception&) {
    }
  }
  return best;
}

/// Evaluation callback for the trainer: success rate in both regions over
/// `rollouts` seeded rollouts each. "success" is their mean.
inline std::function<nlohmann::json(const policy::Policy<float>&, int)> training_evaluator(
    sim::TaskId task, int rollouts, std::uint64_t base_seed, const sim::SimConfig& cfg = {}) {
  return [=](const policy::Policy<float>& p, int) {
    nlohmann::json j;
    double total = 0;
    for (auto region : {sim::Region::kInterpolation, sim::Region::kExtrapolation}) {
      const double r = evaluate_policy(p, task, region, rollouts, base_seed, cfg).rate();
      j[sim::to_string(region)] = r;
      total += r;
    }
    j["success"] = total / 2;
    return j;
  };
}

/// Attention diagnostics pooled over the successful rollouts of a cell.
inline nlohmann::json pooled_attention(const std::vector<Rollout>& rollouts) {
  int steps = 0, agreeing = 0, successful = 0, with_switch = 0, switches = 0, detected = 0;
  for (const auto& r : rollouts) {
    if (!r.success) continue;
    const auto trace = trace_of(r);
    if (trace.empty()) return nullptr;
    ++successful;
    const auto rep = attention_diagnostics(r.object_names, trace);
    steps += rep.steps;
    agreeing += rep.agreeing;
    bool any = false;
    for (const auto& s : rep.switches) {
      ++switches;
      detected += s.detected;
      any = any || s.detected;
    }
    with_switch += any;
  }
  if (!successful) return nullptr;
  return {{"successful_rollouts", successful},
          {"agreement", steps ? static_cast<double>(agreeing) / steps : 0.0},
          {"transitions", switches},
          {"switches_detected", detected},
          {"rollouts_with_detected_switch", successful ? static_cast<double>(with_switch) / successful : 0.0}};
}

inline EvalReport evaluate(const Grid& grid, const sim::SimConfig& cfg = {}, bool verbose = false) {
  EvalReport rep;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& e : grid.entries) {
    const auto meta = policy::read_model_meta(e.checkpoint);
    const auto p = policy::load_model<float>(e.checkpoint);
    if (!(p.camera() == sim::make_camera(cfg))) throw ConfigError("checkpoint camera differs from the eval camera");
    for (auto region : e.regions) {
      ReportCell c;
      c.variant = policy::to_string(p.config().variant);
      c.checkpoint = e.checkpoint;
      c.task = e.task;
      c.region = region;
      c.demos = meta.value("demos", 0);
      c.label = !e.label.empty() ? e.label : meta.value("label", std::to_string(c.demos) + "-" + meta.value("source", std::string("expert")));
      std::vector<Rollout> kept;
      c.result = evaluate_policy(p, e.task, region, e.rollouts, e.seed, cfg, &kept);
      c.attention = pooled_attention(kept);
      c.max_during_training = max_logged_rate(e.checkpoint, region);
      if (verbose)
        std::fprintf(stderr, "%s %s %s: %d/%d\n", c.variant.c_str(), sim::to_string(e.task), sim::to_string(region),
                     c.result.successes, c.result.rollouts);
      rep.cells.push_back(std::move(c));
    }
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json outcome = nlohmann::json::array();
    for (bool b : c.result.outcome) outcome.push_back(b);
    cells.push_back({{"variant", c.variant},
                     {"label", c.label},
                     {"checkpoint", c.checkpoint},
                     {"task", sim::to_string(c.task)},
                     {"region", sim::to_string(c.region)},
                     {"demos", c.demos},
                     {"rollouts", c.result.rollouts},
                     {"successes", c.result.successes},
                     {"success_rate", c.result.rate()},
                     {"max_during_training",
                      c.max_during_training ? nlohmann::json(*c.max_during_training) : nlohmann::json()},
                     {"seeds", c.result.seeds},
                     {"outcomes", outcome},
                     {"mean_steps", c.result.mean_steps},
                     {"seconds", c.result.seconds},
                     {"attention", c.attention}});
  }
  return {{"cells", cells}, {"seconds", r.seconds}};
}

/// Rows: variant and label. Columns: task x region. Final-checkpoint rates,
/// with the best rate logged during training in brackets when available.
inline std::string format_table(const EvalReport& r) {
  std::vector<std::string> cols, rows;
  std::map<std::pair<std::string, std::string>, std::string> cell;
  auto add_unique = [](std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
  };
  for (const auto& c : r.cells) {
    const std::string col = std::string(sim::to_string(c.task)) + "/" + (c.region == sim::Region::kInterpolation ? "interp" : "extrap");
    const std::string row = c.variant + " (" + c.label + ")";
    add_unique(cols, col);
    add_unique(rows, row);
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << c.result.rate();
    if (c.max_during_training) s << " [" << std::setprecision(2) << *c.max_during_training << "]";
    cell[{row, col}] = s.str();
  }
  std::size_t w0 = 8;
  for (const auto& row : rows) w0 = std::max(w0, row.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(w0) + 2) << "policy";
  for (const auto& col : cols) out << std::setw(24) << col;
  out << "\n";
  for (const auto& row : rows) {
    out << std::setw(static_cast<int>(w0) + 2) << row;
    for (const auto& col : cols) {
      const auto it = cell.find({row, col});
      out << std::setw(24) << (it == cell.end() ? "-" : it->second);
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace han::eval
