// sacla — train, evaluate, and export stability analyses for the SACLA
// family of agents (SAC / SACLA / POLYC) on the built-in environments.
//
// Exit codes: 0 success, 2 configuration or file-format error, 3 numeric
// failure during training or evaluation.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sacla/config.hpp"
#include "sacla/stability.hpp"
#include "sacla/trainer.hpp"

namespace {

using namespace sacla;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

ExportFormat format_for(const std::string& path) {
  return path.size() >= 5 && path.compare(path.size() - 5, 5, ".json") == 0
             ? ExportFormat::kJson
             : ExportFormat::kCsv;
}

// Reconstruct the AppConfig a checkpoint was trained under from the JSON
// document embedded at save time.
AppConfig config_from_checkpoint(const Checkpoint& ck) {
  std::string blob;
  for (const auto& e : ck.arrays.entries) {
    if (e.name != "config/json") continue;
    blob.reserve(e.data.size());
    for (float f : e.data)
      blob.push_back(static_cast<char>(static_cast<unsigned char>(f)));
  }
  if (blob.empty())
    throw FormatError("checkpoint carries no embedded configuration");
  nlohmann::json doc = nlohmann::json::parse(blob, nullptr, false);
  if (doc.is_discarded())
    throw FormatError("embedded checkpoint configuration is not valid JSON");
  return parse_app_config(doc);
}

struct LoadedRun {
  AppConfig app;
  Trainer trainer;
};

LoadedRun load_run(const std::string& checkpoint_path) {
  Checkpoint ck = checkpoint_load(checkpoint_path);
  AppConfig app = config_from_checkpoint(ck);
  return LoadedRun{app, Trainer::from_checkpoint(app.trainer, ck)};
}

GridSpec parse_grid(const std::string& spec, const Env& env) {
  GridSpec grid = default_grid(env);
  if (spec.empty() || spec == "default") {
    grid.mode = GridSpec::Mode::kLattice;
  } else if (spec == "pendulum-phase") {
    if (env.id != EnvId::kCartPole)
      throw ConfigError("grid pendulum-phase requires the cartpole env");
    grid.mode = GridSpec::Mode::kLattice;
  } else if (spec == "reach-cube") {
    if (env.id != EnvId::kReach)
      throw ConfigError("grid reach-cube requires the reach env");
    grid.mode = GridSpec::Mode::kLattice;
  } else if (spec.rfind("random:", 0) == 0) {
    grid.mode = GridSpec::Mode::kUniformRandom;
    std::size_t n = 0;
    try {
      n = std::stoull(spec.substr(7));
    } catch (const std::exception&) {
      throw ConfigError("bad grid point count: " + spec);
    }
    grid.n = n;
  } else {
    throw ConfigError(
        "unknown grid '" + spec +
        "' (expected reach-cube, pendulum-phase, or random:N)");
  }
  return grid;
}

ObjectiveMode parse_mode(const std::string& spec, const ObjectiveMode& base) {
  ObjectiveMode mode = base;
  auto colon = spec.find(':');
  std::string kind = spec.substr(0, colon);
  mode.kind = objective_kind_from_string(kind);
  if (colon != std::string::npos) {
    double v = 0.0;
    try {
      v = std::stod(spec.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("bad mode parameter: " + spec);
    }
    if (mode.kind == ObjectiveMode::Kind::kPolyc)
      mode.kappa = v;
    else
      mode.beta = v;
  }
  mode.validate();
  return mode;
}

// Insert a per-cell suffix before the path extension, if any.
std::string cell_path(const std::string& base, const std::string& suffix) {
  if (base.empty()) return base;
  auto dot = base.find_last_of('.');
  auto slash = base.find_last_of('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
    return base + "-" + suffix;
  return base.substr(0, dot) + "-" + suffix + base.substr(dot);
}

int cmd_train(const std::string& config_path, long long seed, bool seed_set,
              std::vector<std::string> overrides) {
  if (seed_set)
    overrides.push_back("trainer.seed=" + std::to_string(seed));
  AppConfig app = load_app_config(config_path, overrides);
  TrainResult res = train_run(app.trainer);
  std::printf("completed %lld steps", static_cast<long long>(res.steps));
  if (res.evaluated)
    std::printf(", final roa_percent %.2f", res.final_roa_percent);
  std::printf("\n");
  return kExitOk;
}

int cmd_eval_roa(const std::string& checkpoint_path, const std::string& grid_spec,
                 int K, bool K_set, const std::string& out_path) {
  LoadedRun run = load_run(checkpoint_path);
  const TrainConfig& cfg = run.trainer.cfg;
  GridSpec grid = parse_grid(grid_spec, run.trainer.env);
  grid.seed = Rng(cfg.seed).derive("cli-grid").next_u64();
  std::uint64_t eval_seed = Rng(cfg.seed).derive("cli-eval").next_u64();
  std::vector<double> goal = run.trainer.state.goal;
  if (goal.size() != run.trainer.env.goal_dim()) {
    Rng goal_rng = Rng(cfg.seed).derive("cli-goal");
    goal = env_reset(run.trainer.env, goal_rng).goal;
  }
  int eval_K = K_set ? K : cfg.eval_K;
  StabilityReport report =
      roa_percent(run.trainer.nlf, run.trainer.wm, run.trainer.policy,
                  run.trainer.env, grid, goal, eval_K, eval_seed);
  if (!out_path.empty())
    export_plot_data(report, out_path, format_for(out_path));
  std::printf("%.2f\n", report.percent_negative);
  return kExitOk;
}

int cmd_surface(const std::string& checkpoint_path, std::size_t N,
                long long seed, const std::string& out_path) {
  LoadedRun run = load_run(checkpoint_path);
  SurfaceResult surface =
      surface_build(run.trainer.env, run.trainer.policy, run.trainer.wm,
                    run.trainer.nlf, static_cast<std::uint64_t>(seed), N);
  if (!out_path.empty())
    export_plot_data(surface.samples, out_path, format_for(out_path));
  double lp = trajectory_log_probability(surface.trajectory, run.trainer.wm,
                                         run.trainer.policy);
  std::printf("episode length %zu, surface samples %zu, log-probability %.9g\n",
              surface.trajectory.actions.size(), surface.samples.size(), lp);
  return kExitOk;
}

int cmd_compare(const std::string& config_path,
                const std::vector<std::string>& overrides,
                const std::string& modes_csv, int seeds,
                const std::string& out_path) {
  if (seeds < 1) throw ConfigError("--seeds must be >= 1");
  AppConfig base = load_app_config(config_path, overrides);

  std::vector<std::string> mode_specs;
  std::size_t pos = 0;
  while (pos <= modes_csv.size()) {
    auto comma = modes_csv.find(',', pos);
    std::string tok = modes_csv.substr(
        pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (!tok.empty()) mode_specs.push_back(tok);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (mode_specs.empty()) throw ConfigError("--modes lists no modes");

  bool any_abort = false;
  std::string summary = "mode,mean,std\n";
  for (const auto& spec : mode_specs) {
    ObjectiveMode mode = parse_mode(spec, base.trainer.mode);
    std::vector<double> finals;
    bool aborted = false;
    for (int s = 0; s < seeds; ++s) {
      TrainConfig cfg = base.trainer;
      cfg.mode = mode;
      cfg.seed = base.trainer.seed + static_cast<std::uint64_t>(s);
      std::string suffix = spec + "-s" + std::to_string(s);
      for (char& c : suffix)
        if (c == ':') c = '_';
      cfg.metrics_path = cell_path(base.trainer.metrics_path, suffix);
      cfg.checkpoint_path = cell_path(base.trainer.checkpoint_path, suffix);
      if (cfg.eval_every == 0) cfg.eval_every = cfg.total_steps;
      try {
        TrainResult res = train_run(cfg);
        finals.push_back(res.final_roa_percent);
      } catch (const NumericError& e) {
        std::fprintf(stderr, "cell %s seed %llu aborted: %s\n", spec.c_str(),
                     static_cast<unsigned long long>(cfg.seed), e.what());
        aborted = true;
        any_abort = true;
      }
    }
    char row[128];
    if (aborted || finals.empty()) {
      std::snprintf(row, sizeof row, "%s,nan,nan\n", spec.c_str());
    } else {
      double mean = 0.0;
      for (double v : finals) mean += v;
      mean /= static_cast<double>(finals.size());
      double var = 0.0;
      for (double v : finals) var += (v - mean) * (v - mean);
      var /= static_cast<double>(finals.size());
      std::snprintf(row, sizeof row, "%s,%.9g,%.9g\n", spec.c_str(), mean,
                    std::sqrt(var));
    }
    summary += row;
  }
  std::fputs(summary.c_str(), stdout);
  if (!out_path.empty()) {
    std::ofstream f(out_path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + out_path);
    f << summary;
  }
  return any_abort ? kExitNumeric : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SACLA training and stability evaluation"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, grid_spec, out_path, modes_csv;
  std::vector<std::string> overrides;
  long long seed = 0;
  int K = 16;
  std::size_t surface_N = 100;
  int seeds = 1;

  auto* train = app.add_subcommand("train", "Run a training job");
  train->add_option("--config", config_path, "JSON run configuration");
  auto* train_seed = train->add_option("--seed", seed, "Override trainer.seed");
  train->add_option("--override", overrides,
                    "Dotted-path config override KEY=VALUE (repeatable)");

  auto* eval = app.add_subcommand("eval-roa",
                                  "Region-of-attraction grid evaluation");
  eval->add_option("--checkpoint", checkpoint_path, "Trained checkpoint")
      ->required();
  eval->add_option("--grid", grid_spec,
                   "reach-cube | pendulum-phase | random:N (default: the "
                   "environment's lattice)");
  auto* eval_K = eval->add_option("--K", K, "Lie-derivative sample count");
  eval->add_option("--out", out_path, "Report path (.csv or .json)");

  auto* surf = app.add_subcommand("surface", "Lyapunov surface export");
  surf->add_option("--checkpoint", checkpoint_path, "Trained checkpoint")
      ->required();
  surf->add_option("--N", surface_N, "World-model samples per step");
  surf->add_option("--seed", seed, "Episode seed");
  surf->add_option("--out", out_path, "Surface path (.csv or .json)");

  auto* cmp = app.add_subcommand("compare", "Train a mode x seed matrix");
  cmp->add_option("--config", config_path, "JSON run configuration");
  cmp->add_option("--modes", modes_csv,
                  "Comma list, e.g. sac,sacla:0.5,sacla:1.0,polyc")
      ->required();
  cmp->add_option("--seeds", seeds, "Seeds per mode");
  cmp->add_option("--override", overrides,
                  "Dotted-path config override KEY=VALUE (repeatable)");
  cmp->add_option("--out", out_path, "Also write the summary CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train->parsed())
      return cmd_train(config_path, seed, train_seed->count() > 0, overrides);
    if (eval->parsed())
      return cmd_eval_roa(checkpoint_path, grid_spec, K, eval_K->count() > 0,
                          out_path);
    if (surf->parsed())
      return cmd_surface(checkpoint_path, surface_N, seed, out_path);
    if (cmp->parsed())
      return cmd_compare(config_path, overrides, modes_csv, seeds, out_path);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitConfig;
}
