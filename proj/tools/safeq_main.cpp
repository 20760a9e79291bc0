// safeq: train / eval / oracle-check driver.
//
//   safeq train [--config run.json] [--agent.gamma 0.9] [--seed 3] [--parallel-seeds k]
//   safeq eval --config run.json [--checkpoint dir]
//   safeq oracle-check [--config run.json]
//
// Exit codes: 0 ok, 1 acceptance failure or runtime error, 2 usage/config error.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdlib>
#include <filesystem>
#include <thread>

#include "safeq/harness.hpp"

namespace {

using namespace safeq;

constexpr int kOk = 0;
constexpr int kFail = 1;
constexpr int kUsage = 2;

/// `--path value` and `--path=value` pairs from the arguments CLI11 left over.
std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0 || arg.size() < 3) throw ConfigError("unexpected argument '" + arg + "'");
    std::string key = arg.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("missing value for --" + key);
      value = extras[++i];
    }
    out.emplace_back(expand_alias(key), value);
  }
  return out;
}

RunConfig build_config(const std::string& path, const std::vector<std::string>& extras, const std::string& mode) {
  Json doc = path.empty() ? Json::object() : load_config_file(path);
  apply_overrides(doc, parse_overrides(extras));
  doc["mode"] = mode;
  RunConfig cfg = run_config_from_json(doc);
  cfg.validate();
  return cfg;
}

int run_one(const RunConfig& cfg, const std::string& dir) {
  if (cfg.mode == "train") {
    const auto out = cmd_train(cfg, dir);
    fmt::print("train: {} episodes, convergence episode {}, output {}\n", cfg.episodes, out.convergence_episode,
               dir);
    return kOk;
  }
  if (cfg.mode == "eval") {
    const auto s = cmd_eval(cfg, dir);
    fmt::print("eval: episodes {} mean_return {:.6g} feasible_probability {:.4f} override_rate {:.4f} "
               "collision_rate {:.4f}\n",
               s.episodes, s.mean_return, s.feasible_probability, s.override_rate, s.collision_rate);
    for (const auto& [id, v] : s.violation_rate) fmt::print("  violation_rate[{}] = {:.4f}\n", id, v);
    return kOk;
  }
  const auto out = cmd_oracle_check(cfg, dir);
  fmt::print("{}", oracle_csv(out.rows));
  if (out.all_pass) return kOk;
  std::string failing;
  for (const auto& r : out.rows) {
    if (!r.pass) failing += (failing.empty() ? "" : " ") + std::to_string(r.seed);
  }
  fmt::print(stderr, "oracle-check failed for seeds: {}\n", failing);
  return kFail;
}

/// Eval without --checkpoint reads the checkpoints of the train run with the same seed.
void default_checkpoints(RunConfig& cfg, const char* root) {
  if (cfg.mode != "eval" || !cfg.checkpoint_dir.empty()) return;
  RunConfig train = cfg;
  train.mode = "train";
  cfg.checkpoint_dir = (std::filesystem::path(resolve_output_dir(train, root)) / "checkpoints").string();
}

int dispatch(RunConfig base, int parallel) {
  const char* root = std::getenv("SAFEQ_OUT");
  const std::string dir = resolve_output_dir(base, root);
  if (parallel <= 1 || base.mode == "oracle-check") {
    default_checkpoints(base, root);
    return run_one(base, dir);
  }

  std::vector<RunConfig> cfgs(static_cast<std::size_t>(parallel), base);
  std::vector<std::string> dirs;
  for (int i = 0; i < parallel; ++i) {
    auto& c = cfgs[static_cast<std::size_t>(i)];
    c.seed = base.seed + static_cast<std::uint64_t>(i);
    const std::string sub = fmt::format("seed_{}", c.seed);
    if (c.mode == "eval") {
      if (c.checkpoint_dir.empty()) {
        RunConfig train = base;
        train.mode = "train";
        c.checkpoint_dir = resolve_output_dir(train, root);
      }
      c.checkpoint_dir = (std::filesystem::path(c.checkpoint_dir) / sub / "checkpoints").string();
    }
    dirs.push_back((std::filesystem::path(dir) / sub).string());
  }
  std::vector<int> codes(cfgs.size(), kOk);
  std::vector<std::string> errors(cfgs.size());
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    threads.emplace_back([&, i] {
      try {
        codes[i] = run_one(cfgs[i], dirs[i]);
      } catch (const ConfigError& e) {
        codes[i] = kUsage;
        errors[i] = e.what();
      } catch (const std::exception& e) {
        codes[i] = kFail;
        errors[i] = e.what();
      }
    });
  }
  for (auto& t : threads) t.join();
  int code = kOk;
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    if (!errors[i].empty()) fmt::print(stderr, "seed {}: error: {}\n", cfgs[i].seed, errors[i]);
    code = std::max(code, codes[i]);
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safe deep Q-learning with augmented Lagrangian penalties"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string checkpoint;
  int parallel = 1;
  const std::pair<const char*, const char*> subs[] = {
      {"train", "train agents, write metrics and checkpoints"},
      {"eval", "greedy evaluation of saved checkpoints"},
      {"oracle-check", "compare a tabular learner with the exhaustive CMDP oracle"},
  };
  for (const auto& [name, about] : subs) {
    auto* sub = app.add_subcommand(name, about);
    sub->allow_extras();
    sub->add_option("-c,--config", config_path, "JSON run config");
    sub->add_option("--parallel-seeds", parallel, "independent runs on seeds seed..seed+k-1")->check(CLI::PositiveNumber);
    if (std::string(name) == "eval") sub->add_option("--checkpoint", checkpoint, "checkpoint directory");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  CLI::App* chosen = app.get_subcommands().front();
  try {
    RunConfig cfg = build_config(config_path, chosen->remaining(), chosen->get_name());
    if (!checkpoint.empty()) cfg.checkpoint_dir = checkpoint;
    return dispatch(cfg, parallel);
  } catch (const ParseError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kUsage;
  } catch (const ConfigError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kFail;
  }
}
