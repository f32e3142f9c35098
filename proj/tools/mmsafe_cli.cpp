// mmsafe: run single rollouts, seed-matched batches, and the goal-inference demo.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime abort.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mmsafe/io.hpp"
#include "mmsafe/sim.hpp"

namespace fs = std::filesystem;
using mmsafe::io::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitAbort = 3;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string method;
  std::vector<std::string> overrides;
  std::string out = "out";
};

struct Resolved {
  mmsafe::ScenarioConfig cfg;
  json snapshot;
};

Resolved resolve(const CommonOptions& o) {
  json j = o.config.empty() ? json::object() : mmsafe::io::load_json_file(o.config);
  for (const auto& s : o.overrides) mmsafe::io::apply_override(j, s);
  if (o.seed) j["seed"] = *o.seed;
  if (!o.method.empty()) j["method"] = o.method;
  Resolved r;
  r.cfg = mmsafe::io::config_from_json(j);
  r.snapshot = mmsafe::io::config_to_json(r.cfg);
  return r;
}

std::vector<mmsafe::Method> parse_methods(const std::string& list) {
  std::vector<mmsafe::Method> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto comma = list.find(',', start);
    const std::string name = list.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    const auto m = mmsafe::parse_method(name);
    if (!m) throw mmsafe::ConfigError("unknown method '" + name + "' (valid: sea, nmmssa, ommssa)");
    out.push_back(*m);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

unsigned thread_limit() {
  const char* env = std::getenv("MMSAFE_THREADS");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw mmsafe::ConfigError("MMSAFE_THREADS must be a positive integer");
  return static_cast<unsigned>(v);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw mmsafe::Error("cannot write '" + path.string() + "'");
  f << text;
}

template <class Writer>
void write_stream(const fs::path& path, Writer&& w) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw mmsafe::Error("cannot write '" + path.string() + "'");
  w(f);
}

void write_manifest(const fs::path& dir, const std::string& command, const Resolved& r,
                    const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& outputs,
                    double seconds) {
  const json manifest = {
      {"tool", "mmsafe"},
      {"version", MMSAFE_VERSION},
      {"command", command},
      {"config", r.snapshot},
      {"seeds", seeds},
      {"outputs", outputs},
      {"wall_seconds", seconds},
  };
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

double elapsed(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

int cmd_run(const CommonOptions& o) {
  const auto start = std::chrono::steady_clock::now();
  const Resolved r = resolve(o);
  const mmsafe::RolloutLog log = mmsafe::run_rollout(r.cfg);

  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_stream(dir / "trajectory.csv", [&](std::ostream& f) { mmsafe::io::write_trajectory_csv(f, log); });
  const json summary = mmsafe::io::rollout_summary(log);
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  write_manifest(dir, "run", r, {r.cfg.seed}, {"trajectory.csv", "summary.json"}, elapsed(start));

  std::cout << "method " << mmsafe::method_name(log.method) << ", seed " << log.seed << ": "
            << summary["violations"].get<int>() << " violations, " << log.goals_reached << " goals, mean area "
            << summary["area"].get<double>() << "\n";
  if (log.aborted) {
    std::cerr << "rollout aborted: " << log.abort_reason << "\n";
    return kExitAbort;
  }
  return kExitOk;
}

int cmd_batch(const CommonOptions& o, int n, const std::string& methods_arg) {
  const auto start = std::chrono::steady_clock::now();
  const Resolved r = resolve(o);
  const auto methods = parse_methods(methods_arg);
  if (n < 1) throw mmsafe::ConfigError("--n must be at least 1");
  const unsigned threads = thread_limit();

  const auto batches = mmsafe::run_batch(r.cfg, n, methods, threads);

  const fs::path dir(o.out);
  fs::create_directories(dir);
  json metrics = json::array();
  for (const auto& b : batches) metrics.push_back(mmsafe::io::metrics_to_json(b));
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  write_stream(dir / "per_rollout.csv", [&](std::ostream& f) { mmsafe::io::write_per_rollout_csv(f, batches); });
  write_manifest(dir, "batch", r, batches.front().seeds, {"metrics.json", "per_rollout.csv"}, elapsed(start));

  mmsafe::io::write_metrics_table(std::cout, batches);
  for (const auto& b : batches)
    if (b.abort_rate_flag)
      std::cerr << "warning: " << mmsafe::method_name(b.method) << " aborted " << b.aborts << " of "
                << b.n_rollouts << " rollouts\n";
  return kExitOk;
}

int cmd_infer_demo(const CommonOptions& o) {
  const auto start = std::chrono::steady_clock::now();
  const Resolved r = resolve(o);
  const auto scenario = mmsafe::sample_scenario(r.cfg, r.cfg.seed);
  const auto samples = mmsafe::run_inference_demo(r.cfg, scenario);

  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_stream(dir / "belief.csv", [&](std::ostream& f) { mmsafe::io::write_belief_csv(f, samples); });
  write_manifest(dir, "infer-demo", r, {r.cfg.seed}, {"belief.csv"}, elapsed(start));

  std::cout << "true goal " << scenario.true_goal << ", final belief " << samples.back().belief.transpose()
            << "\n";
  return kExitOk;
}

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("-c,--config", o.config, "JSON config file (defaults used when omitted)");
  app->add_option("--seed", o.seed, "Override the config seed");
  app->add_option("--method", o.method, "sea | nmmssa | ommssa");
  app->add_option("--set", o.overrides, "Override a config value, e.g. --set control.eps=0.01")
      ->take_all();
  app->add_option("-o,--out", o.out, "Output directory")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal safe-set control: rollouts, batches and goal inference"};
  app.require_subcommand(1);
  app.set_version_flag("--version", MMSAFE_VERSION);

  CommonOptions run_opts, batch_opts, infer_opts;
  auto* run = app.add_subcommand("run", "Single closed-loop rollout; writes trajectory.csv and summary.json");
  add_common(run, run_opts);

  auto* batch = app.add_subcommand("batch", "Seed-matched rollouts per method; writes metrics.json");
  add_common(batch, batch_opts);
  int n = 100;
  std::string methods = "sea,nmmssa,ommssa";
  batch->add_option("-n,--n", n, "Rollouts per method")->capture_default_str();
  batch->add_option("--methods", methods, "Comma-separated methods")->capture_default_str();

  auto* infer = app.add_subcommand("infer-demo", "Goal inference with no robot interaction; writes belief.csv");
  add_common(infer, infer_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_opts);
    if (*batch) return cmd_batch(batch_opts, n, methods);
    if (*infer) return cmd_infer_demo(infer_opts);
  } catch (const mmsafe::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitAbort;
  }
  return kExitConfig;
}
