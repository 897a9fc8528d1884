// han: collect demonstrations, train and evaluate policies, render overlays,
// serve teleoperation sessions and run the gradient checks.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "han/eval/overlay.hpp"
#include "han/eval/report.hpp"
#include "han/service/teleop.hpp"
#include "han/train/gradcheck_suite.hpp"
#include "han/train/trainer.hpp"

using namespace han;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// Default output root: $HAN_OUT_DIR, else ./han_runs.
std::string default_out_dir() {
  const char* env = std::getenv("HAN_OUT_DIR");
  return env && *env ? env : "han_runs";
}

std::string resolve_out(const std::string& given, const std::string& fallback_name) {
  return given.empty() ? (fs::path(default_out_dir()) / fallback_name).string() : given;
}

/// Every option of a subcommand as given (defaults included).
json echo_flags(const CLI::App& app) {
  json j;
  j["command"] = app.get_name();
  for (const auto* opt : app.get_options()) {
    const auto name = opt->get_single_name();
    if (name.empty() || name == "help") continue;
    const auto r = opt->results();
    if (r.empty())
      j["flags"][name] = opt->get_default_str();
    else if (r.size() == 1)
      j["flags"][name] = r[0];
    else
      j["flags"][name] = r;
  }
  return j;
}

void write_json(const std::string& path, const json& j) {
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << j.dump(2) << "\n";
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ---- collect ------------------------------------------------------------------

struct CollectArgs {
  std::string task = "lifting", region = "interpolation", source = "expert", out;
  int n = 50;
  std::uint64_t seed = 0;
  bool no_noise = false;
  std::vector<std::string> from;
};

int run_collect(const CollectArgs& a, const json& flags) {
  const auto task = sim::parse_task(a.task);
  const auto region = sim::parse_region(a.region);
  const auto source = train::parse_source(a.source);
  const auto out = resolve_out(a.out, a.task + "_" + a.region + "_" + std::to_string(a.n) + "_" + a.source + ".handata");
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  train::Dataset ds;
  if (source == train::Source::kExpert) {
    train::CollectOptions opt;
    opt.noise = !a.no_noise;
    opt.metadata = flags;
    ds = train::collect_demos(task, region, a.n, a.seed, opt);
  } else {
    // Human demos come from teleop recordings; keep the first n of this task and region.
    if (a.from.empty()) throw ConfigError("--source human needs --from <teleop recording>...");
    ds.header.task = task;
    bool have_header = false;
    for (const auto& path : a.from) {
      auto rec = train::read_dataset(path);
      if (rec.header.task != task) throw ConfigError(path + " records " + sim::to_string(rec.header.task));
      if (have_header && train::encode_header(rec.header) != train::encode_header(ds.header))
        throw ConfigError(path + " was recorded with a different simulator config");
      ds.header = rec.header;
      have_header = true;
      for (auto& d : rec.demos)
        if (d.source == train::Source::kHuman && d.region == region && static_cast<int>(ds.demos.size()) < a.n)
          ds.demos.push_back(std::move(d));
    }
    if (static_cast<int>(ds.demos.size()) < a.n)
      throw ConfigError("recordings hold only " + std::to_string(ds.demos.size()) + " human demos for " + a.task + "/" +
                        a.region);
  }
  train::write_dataset(out, ds);
  const auto r = train::replay(ds);
  if (!r.ok) throw FormatError("replay check failed at demo " + std::to_string(r.demo) + ": " + r.message);
  std::cout << "wrote " << ds.demos.size() << " demos (" << ds.frame_count() << " frames) to " << out << "\n";
  return 0;
}

// ---- train --------------------------------------------------------------------

struct TrainArgs {
  std::string data, variant = "han", config, out;
  int epochs = -1, eval_every = -1, eval_rollouts = 10;
  std::uint64_t eval_seed = 500;
  long long seed = -1;
  bool quiet = false;
};

int run_train(const TrainArgs& a, const json& flags) {
  json cfg_json = a.config.empty() ? json::object() : read_json_file(a.config);
  auto pol_json = cfg_json.value("policy", json::object());
  pol_json["variant"] = a.variant;
  const auto pc = policy::policy_config_from_json(pol_json);
  auto tc_json = cfg_json.value("train", json::object());
  if (a.epochs >= 0) tc_json["epochs"] = a.epochs;
  if (a.eval_every >= 0) tc_json["eval_every"] = a.eval_every;
  if (a.seed >= 0) tc_json["seed"] = a.seed;
  const auto tc = train::train_config_from_json(tc_json);

  const auto ds = train::read_dataset(a.data);
  const auto out = resolve_out(a.out, std::string(policy::to_string(pc.variant)) + "_" +
                                          fs::path(a.data).stem().string());
  fs::create_directories(out);
  policy::Policy<float> p(pc, ds.header.camera());
  train::TrainHooks hooks;
  hooks.out_dir = out;
  hooks.verbose = !a.quiet;
  hooks.metadata = {{"cli", flags}, {"train_config", train::to_json(tc)}};
  if (a.eval_rollouts > 0) hooks.evaluate = eval::training_evaluator(ds.header.task, a.eval_rollouts, a.eval_seed, ds.header.sim);
  const auto r = train::train_policy(p, ds, tc, hooks);
  std::cout << "trained " << policy::to_string(pc.variant) << " for " << r.epochs.size() << " epochs; final loss "
            << r.epochs.back().mean_loss;
  if (r.best_epoch >= 0) std::cout << "; best eval " << r.best_score << " at epoch " << r.best_epoch;
  std::cout << "\ncheckpoints in " << out << "\n";
  return 0;
}

// ---- eval ---------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> ckpt;
  std::string grid, out, task = "lifting";
  std::vector<std::string> regions{"interpolation", "extrapolation"};
  int rollouts = 30;
  std::uint64_t seed = 1000;
  bool quiet = false;
};

int run_eval(const EvalArgs& a, const json& flags) {
  eval::Grid grid;
  if (!a.grid.empty()) grid = eval::grid_from_json(read_json_file(a.grid));
  for (const auto& c : a.ckpt) {
    eval::GridEntry e;
    e.checkpoint = c;
    e.task = sim::parse_task(a.task);
    e.regions.clear();
    for (const auto& r : a.regions) e.regions.push_back(sim::parse_region(r));
    e.rollouts = a.rollouts;
    e.seed = a.seed;
    grid.entries.push_back(e);
  }
  if (grid.entries.empty()) throw ConfigError("nothing to evaluate: give --ckpt or --grid");
  const auto report = eval::evaluate(grid, {}, !a.quiet);
  auto j = eval::to_json(report);
  j["cli"] = flags;
  const auto out = resolve_out(a.out, "eval_report.json");
  write_json(out, j);
  std::cout << eval::format_table(report) << "report written to " << out << "\n";
  return 0;
}

// ---- visualize ----------------------------------------------------------------

struct VisualizeArgs {
  std::string ckpt, task = "lifting", region = "interpolation", out;
  std::uint64_t seed = 0;
  int max_steps = 0, scale = 4;
};

int run_visualize(const VisualizeArgs& a, const json& flags) {
  const auto task = sim::parse_task(a.task);
  const auto region = sim::parse_region(a.region);
  const auto p = policy::load_model<float>(a.ckpt);
  const auto r = eval::rollout(eval::policy_controller(p, a.seed), task, region, a.seed, a.max_steps);
  const auto out = resolve_out(a.out, "viz_" + a.task + "_" + std::to_string(a.seed));
  eval::OverlayOptions opt;
  opt.scale = a.scale;
  const auto frames = eval::export_overlays(r, p.camera(), p.config().crop_h, p.config().crop_w, out, opt);
  json steps = json::array();
  for (const auto& s : r.steps) {
    json o = policy::to_json(s.output);
    o["x_ee"] = {s.x_ee.x(), s.x_ee.y(), s.x_ee.z()};
    o["fingers_closed"] = s.fingers_closed;
    steps.push_back(std::move(o));
  }
  json j{{"cli", flags},
         {"checkpoint", a.ckpt},
         {"task", a.task},
         {"region", sim::to_string(region)},
         {"seed", a.seed},
         {"success", r.success},
         {"failure", r.failure},
         {"objects", r.object_names},
         {"steps", steps}};
  if (const auto trace = eval::trace_of(r); !trace.empty())
    j["attention"] = eval::to_json(eval::attention_diagnostics(r.object_names, trace));
  write_json((fs::path(out) / "trace.json").string(), j);
  std::cout << (r.success ? "success" : "failure: " + r.failure) << " after " << r.steps.size() << " steps; "
            << frames.size() << " overlay frames in " << out << "\n";
  return 0;
}

// ---- teleop-serve -------------------------------------------------------------

struct ServeArgs {
  std::string task = "lifting", region = "interpolation", out, bind = "127.0.0.1", ckpt;
  int port = 8765, timeout_s = 30;
  std::uint64_t seed = 0;
};

volatile std::sig_atomic_t g_stop = 0;

int run_serve(const ServeArgs& a, const json& flags) {
  service::ServerOptions o;
  o.task = sim::parse_task(a.task);
  o.region = sim::parse_region(a.region);
  o.out = resolve_out(a.out, "teleop_" + a.task + ".handata");
  o.port = a.port;
  o.bind = a.bind;
  o.seed = a.seed;
  o.idle_timeout_ms = a.timeout_s * 1000;
  o.metadata = flags;
  o.verbose = true;
  if (!a.ckpt.empty()) o.overlay = std::make_shared<policy::Policy<float>>(policy::load_model<float>(a.ckpt));
  if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
  service::TeleopServer server(o);
  const int port = server.start();
  std::cout << "teleop protocol v" << service::kProtocolVersion << " on " << a.bind << ":" << port << ", task "
            << a.task << ", recording to " << o.out << std::endl;
  std::signal(SIGINT, [](int) { g_stop = 1; });
  std::signal(SIGTERM, [](int) { g_stop = 1; });
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
  server.stop();
  std::cout << server.saved() << " demos saved\n";
  return 0;
}

// ---- gradcheck ----------------------------------------------------------------

int run_gradcheck(std::uint64_t seed, double tol) {
  int failed = 0;
  const auto t0 = std::chrono::steady_clock::now();
  train::run_gradient_suite(seed, [&](const train::GradSuiteEntry& e) {
    const bool ok = e.passed(tol);
    failed += !ok;
    std::printf("%-4s %-28s max rel err %.2e  (%zu entries)%s%s\n", ok ? "ok" : "FAIL", e.name.c_str(),
                e.result.max_rel_error, e.result.checked, ok ? "" : "  worst: ", ok ? "" : e.result.worst_entry.c_str());
  });
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s in %.1f s\n", failed ? "gradient check FAILED" : "all gradient checks passed", s);
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hand-eye action network toolkit"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  CollectArgs ca;
  auto* collect = app.add_subcommand("collect", "record demonstrations into a dataset file");
  collect->add_option("--task", ca.task, "lifting | stacking | tool_using")->capture_default_str();
  collect->add_option("--region", ca.region, "interpolation | extrapolation")->capture_default_str();
  collect->add_option("--n", ca.n, "successful demos to keep")->capture_default_str();
  collect->add_option("--source", ca.source, "expert | human")->capture_default_str();
  collect->add_option("--seed", ca.seed)->capture_default_str();
  collect->add_option("--out", ca.out, "dataset path (default under $HAN_OUT_DIR)");
  collect->add_option("--from", ca.from, "teleop recordings, for --source human");
  collect->add_flag("--no-noise", ca.no_noise, "disable expert action noise");

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "behavior-clone a policy on a dataset");
  trainc->add_option("--data", ta.data)->required();
  trainc->add_option("--variant", ta.variant, "han | mlp_atn | no_roi | no_con | bc_image | bc_states")
      ->capture_default_str();
  trainc->add_option("--config", ta.config, "JSON with optional \"policy\" and \"train\" objects");
  trainc->add_option("--out", ta.out, "run directory (default under $HAN_OUT_DIR)");
  trainc->add_option("--epochs", ta.epochs, "overrides the config");
  trainc->add_option("--eval-every", ta.eval_every, "overrides the config");
  trainc->add_option("--seed", ta.seed, "overrides the config");
  trainc->add_option("--eval-rollouts", ta.eval_rollouts, "rollouts per region for in-training evaluation; 0 disables")
      ->capture_default_str();
  trainc->add_option("--eval-seed", ta.eval_seed)->capture_default_str();
  trainc->add_flag("--quiet", ta.quiet);

  EvalArgs ea;
  auto* evalc = app.add_subcommand("eval", "seeded rollouts of checkpoints, success table and report");
  evalc->add_option("--ckpt", ea.ckpt, "checkpoint(s) evaluated on --task");
  evalc->add_option("--grid", ea.grid, "JSON grid {\"cells\":[{\"ckpt\",\"task\",...}]}");
  evalc->add_option("--out", ea.out, "report path (default under $HAN_OUT_DIR)");
  evalc->add_option("--task", ea.task)->capture_default_str();
  evalc->add_option("--regions", ea.regions)->capture_default_str();
  evalc->add_option("--rollouts", ea.rollouts)->capture_default_str();
  evalc->add_option("--seed", ea.seed)->capture_default_str();
  evalc->add_flag("--quiet", ea.quiet);

  VisualizeArgs va;
  auto* viz = app.add_subcommand("visualize", "roll out a checkpoint and write overlay frames");
  viz->add_option("--ckpt", va.ckpt)->required();
  viz->add_option("--task", va.task)->capture_default_str();
  viz->add_option("--region", va.region)->capture_default_str();
  viz->add_option("--seed", va.seed)->capture_default_str();
  viz->add_option("--out", va.out, "output directory (default under $HAN_OUT_DIR)");
  viz->add_option("--max-steps", va.max_steps, "0 = task limit")->capture_default_str();
  viz->add_option("--scale", va.scale)->capture_default_str();

  ServeArgs sa;
  auto* serve = app.add_subcommand("teleop-serve", "teleoperation session server (protocol v1)");
  serve->add_option("--port", sa.port)->capture_default_str();
  serve->add_option("--task", sa.task)->capture_default_str();
  serve->add_option("--region", sa.region)->capture_default_str();
  serve->add_option("--out", sa.out, "dataset path demos are appended to");
  serve->add_option("--seed", sa.seed)->capture_default_str();
  serve->add_option("--bind", sa.bind)->capture_default_str();
  serve->add_option("--timeout", sa.timeout_s, "idle seconds before a session is paused")->capture_default_str();
  serve->add_option("--ckpt", sa.ckpt, "policy whose outputs are streamed as overlays");

  std::uint64_t gc_seed = 100;
  double gc_tol = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every op and policy variant");
  gradcheck->add_option("--seed", gc_seed)->capture_default_str();
  gradcheck->add_option("--tol", gc_tol)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*collect) return run_collect(ca, echo_flags(*collect));
    if (*trainc) return run_train(ta, echo_flags(*trainc));
    if (*evalc) return run_eval(ea, echo_flags(*evalc));
    if (*viz) return run_visualize(va, echo_flags(*viz));
    if (*serve) return run_serve(sa, echo_flags(*serve));
    if (*gradcheck) return run_gradcheck(gc_seed, gc_tol);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
