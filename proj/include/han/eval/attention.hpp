#pragma once

#include <limits>
#include <map>
#include <string>
#include <vector>

#include "han/eval/rollout.hpp"

namespace han::eval {

/// Stage of a step from ground-truth attachment, with the object the
/// demonstrator is heading for.
struct StageLabel {
  std::string stage;
  std::string target;
};

inline StageLabel stage_of(sim::TaskId task, const std::vector<std::string>& names, std::optional<int> attached,
                           bool tool_used) {
  auto held = [&](const char* name) { return attached && *attached < static_cast<int>(names.size()) && names[*attached] == name; };
  switch (task) {
    case sim::TaskId::kLifting: return {"lift_cube", "cube"};
    case sim::TaskId::kStacking:
      if (held("cube")) return {"place_on_plate", "plate"};
      return {"grasp_cube", "cube"};
    case sim::TaskId::kToolUsing:
      if (held("tool")) return {"pull_cube", "cube"};
      if (held("cube")) return {"place_in_ring", "ring"};
      if (tool_used) return {"grasp_cube", "cube"};
      return {"grasp_tool", "tool"};
  }
  return {"unknown", ""};
}

/// One step of a keypoint trace: x_kp plus object centers.
struct TraceStep {
  Eigen::Vector3d x_kp = Eigen::Vector3d::Zero();
  std::vector<Eigen::Vector3d> centers;
  StageLabel label;
};

inline std::vector<TraceStep> trace_of(const Rollout& r) {
  std::vector<TraceStep> out;
  bool tool_used = false;
  for (const auto& s : r.steps) {
    if (!s.output.x_kp) return {};
    if (s.attached && r.object_names[*s.attached] == "tool") tool_used = true;
    out.push_back({*s.output.x_kp, s.object_centers, stage_of(r.task, r.object_names, s.attached, tool_used)});
  }
  return out;
}

struct StageStats {
  int steps = 0;
  double mean_target_distance = 0;
  double mean_other_distance = 0;  // nearest non-target object; NaN if none
  double agreement = 0;            // fraction of steps with x_kp nearer the target
};

struct SwitchEvent {
  int transition_step = 0;
  std::string from, to;
  int switch_step = -1;  // first step >= transition - window with x_kp nearer the new target; -1 if none
  bool detected = false;
};

struct AttentionReport {
  std::map<std::string, StageStats> stages;
  int steps = 0;
  int agreeing = 0;
  double agreement() const { return steps ? static_cast<double>(agreeing) / steps : 0.0; }
  std::vector<SwitchEvent> switches;
};

/// Per-stage distances of x_kp to the stage target and to the nearest other
/// object, plus switch detection around each stage transition.
inline AttentionReport attention_diagnostics(const std::vector<std::string>& names,
                                             const std::vector<TraceStep>& trace, int window = 5) {
  AttentionReport rep;
  auto index_of = [&](const std::string& n) {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == n) return static_cast<int>(i);
    throw UsageError("trace has no object named " + n);
  };
  // Distances to a given target and to its nearest competitor.
  auto distances = [&](const TraceStep& s, int target) {
    const double dt = (s.x_kp - s.centers[target]).norm();
    double doth = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < s.centers.size(); ++i)
      if (static_cast<int>(i) != target) doth = std::min(doth, (s.x_kp - s.centers[i]).norm());
    return std::pair{dt, doth};
  };
  std::map<std::string, std::pair<double, int>> other_sum;
  for (const auto& s : trace) {
    const auto [dt, doth] = distances(s, index_of(s.label.target));
    auto& st = rep.stages[s.label.stage];
    ++st.steps;
    st.mean_target_distance += dt;
    if (std::isfinite(doth)) {
      other_sum[s.label.stage].first += doth;
      ++other_sum[s.label.stage].second;
      st.agreement += dt < doth;
      ++rep.steps;
      rep.agreeing += dt < doth;
    }
  }
  for (auto& [name, st] : rep.stages) {
    const auto& [sum, n] = other_sum[name];
    st.mean_other_distance = n ? sum / n : std::numeric_limits<double>::quiet_NaN();
    st.agreement = n ? st.agreement / n : 0.0;
    st.mean_target_distance /= st.steps;
  }
  for (std::size_t t = 1; t < trace.size(); ++t) {
    if (trace[t].label.stage == trace[t - 1].label.stage) continue;
    SwitchEvent ev;
    ev.transition_step = static_cast<int>(t);
    ev.from = trace[t - 1].label.stage;
    ev.to = trace[t].label.stage;
    const int target = index_of(trace[t].label.target);
    for (int k = std::max(0, static_cast<int>(t) - window); k < static_cast<int>(trace.size()); ++k) {
      const auto [dt, doth] = distances(trace[k], target);
      if (dt < doth) {
        ev.switch_step = k;
        break;
      }
    }
    ev.detected = ev.switch_step >= 0 && ev.switch_step <= static_cast<int>(t) + window;
    rep.switches.push_back(ev);
  }
  return rep;
}

inline AttentionReport attention_diagnostics(const Rollout& r, int window = 5) {
  return attention_diagnostics(r.object_names, trace_of(r), window);
}

inline nlohmann::json to_json(const AttentionReport& a) {
  nlohmann::json stages = nlohmann::json::object();
  for (const auto& [name, st] : a.stages)
    stages[name] = {{"steps", st.steps},
                    {"mean_target_distance", st.mean_target_distance},
                    {"mean_other_distance", std::isfinite(st.mean_other_distance) ? nlohmann::json(st.mean_other_distance)
                                                                                  : nlohmann::json()},
                    {"agreement", st.agreement}};
  nlohmann::json sw = nlohmann::json::array();
  for (const auto& e : a.switches)
    sw.push_back({{"transition_step", e.transition_step},
                  {"from", e.from},
                  {"to", e.to},
                  {"switch_step", e.switch_step},
                  {"detected", e.detected}});
  return {{"stages", stages}, {"steps", a.steps}, {"agreement", a.agreement()}, {"switches", sw}};
}

}  // namespace han::eval
