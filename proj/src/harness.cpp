#include "safeq/harness.hpp"

#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace safeq {

namespace fs = std::filesystem;

std::unique_ptr<Environment> make_environment(const RunConfig& cfg) {
  switch (cfg.env) {
    case EnvKind::Uav: {
      UavConfig u = cfg.uav;
      u.shield = cfg.shield_enabled;
      return std::make_unique<UavEnv>(u);
    }
    case EnvKind::Ris: return std::make_unique<RisEnv>(cfg.ris);
    case EnvKind::Cmdp: {
      const auto& m = cfg.cmdp;
      return std::make_unique<CmdpEnv>(random_cmdp(cfg.seed, m.states, m.actions, m.constraints, m.gamma,
                                                   m.budget_fraction));
    }
  }
  throw ConfigError("unknown environment");
}

std::vector<SafeAgent> make_run_agents(const Environment& env, const RunConfig& cfg) {
  const ConstraintSet specs = resolve_constraints(env.constraints(), cfg.constraints);
  return make_agents(env, cfg.agent, derive_seed(cfg.seed, 0x5AFE), &specs);
}

std::string resolve_output_dir(const RunConfig& cfg, const char* env_root) {
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  const std::string root = env_root && *env_root ? env_root : "runs";
  return (fs::path(root) / fmt::format("{}_{}_seed{}", to_string(cfg.env), cfg.mode, cfg.seed)).string();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

constexpr const char* kTrajectoryHeader = "episode,step,agent,x,y,energy,min_dist,u2u_ok,u2r_rate,overridden\n";

/// Appends UAV per-step diagnostics to a CSV stream when the env is a UavEnv.
StepObserver trajectory_observer(std::ofstream* out, const int* episode) {
  if (!out) return {};
  return [out, episode](int t, const Environment& env, std::span<const int>, const std::vector<EnvStep>&) {
    const auto* uav = dynamic_cast<const UavEnv*>(&env);
    if (!uav) return;
    const auto& info = uav->last_info();
    for (std::size_t n = 0; n < info.size(); ++n) {
      const auto& i = info[n];
      *out << fmt::format("{},{},{},{:.12g},{:.12g},{:.12g},{:.12g},{},{:.12g},{}\n", *episode, t, n, i.x, i.y,
                          i.energy, i.min_dist, i.u2u_ok ? 1 : 0, i.u2r_rate, i.overridden ? 1 : 0);
    }
  };
}

Json duals_json(const DualState& d) {
  return Json{{"lambda", d.lambda}, {"mu", d.mu}, {"nu", d.nu}, {"rho_eq", d.rho_eq}, {"rho_inst", d.rho_inst}};
}

std::string checkpoint_path(const std::string& dir, std::size_t n) {
  return (fs::path(dir) / fmt::format("agent_{}.bin", n)).string();
}

}  // namespace

TrainOutcome cmd_train(const RunConfig& cfg, const std::string& dir) {
  cfg.validate();
  fs::create_directories(fs::path(dir) / "checkpoints");
  write_text_file((fs::path(dir) / "config.resolved.json").string(), to_json(cfg).dump(2) + "\n");

  auto env = make_environment(cfg);
  auto agents = make_run_agents(*env, cfg);
  MetricsWriter metrics((fs::path(dir) / "metrics.csv").string(), agents.front().constraints());

  std::unique_ptr<std::ofstream> traj;
  if (cfg.trajectory && cfg.env == EnvKind::Uav) {
    traj = std::make_unique<std::ofstream>((fs::path(dir) / "trajectory.csv").string(), std::ios::binary);
    *traj << kTrajectoryHeader;
  }
  int episode = 0;
  const auto observer = trajectory_observer(traj.get(), &episode);
  auto on_episode = [&](const std::vector<EpisodeReport>& reports) {
    metrics.write(reports);
    ++episode;
  };

  TrainOutcome out;
  out.dir = dir;
  out.run = run_training(*env, agents, cfg.episodes, derive_seed(cfg.seed, 0x7EA1), on_episode, observer);
  out.convergence_episode = convergence_episode(out.run);

  for (std::size_t n = 0; n < agents.size(); ++n) {
    write_text_file(checkpoint_path((fs::path(dir) / "checkpoints").string(), n), agents[n].q().checkpoint());
  }

  Json summary;
  summary["episodes"] = cfg.episodes;
  summary["convergence_episode"] = out.convergence_episode;
  int aborted = 0;
  long long collisions = 0;
  long long overrides = 0;
  for (const auto& ep : out.run.episodes) {
    for (const auto& r : ep) {
      aborted += r.aborted ? 1 : 0;
      collisions += r.collisions;
      overrides += r.shield_overrides;
    }
  }
  summary["aborted_episode_reports"] = aborted;
  summary["collisions"] = collisions;
  summary["shield_overrides"] = overrides;
  summary["final_duals"] = Json::array();
  for (const auto& a : agents) summary["final_duals"].push_back(duals_json(a.duals()));
  write_text_file((fs::path(dir) / "summary.json").string(), summary.dump(2) + "\n");
  return out;
}

EvalSummary evaluate_agents(Environment& env, std::vector<SafeAgent>& agents, int episodes, std::uint64_t seed,
                            std::string* ris_rows) {
  auto* ris = dynamic_cast<RisEnv*>(&env);
  struct Acc {
    bool feasible = true;
    double power = 0.0;
    double min_sinr_db = std::numeric_limits<double>::infinity();
    int steps = 0;
  } acc;
  std::vector<Acc> per_episode;
  StepObserver observer;
  if (ris) {
    observer = [&](int, const Environment&, std::span<const int>, const std::vector<EnvStep>&) {
      const auto& o = ris->last_outcome();
      acc.feasible = acc.feasible && o.feasible;
      acc.power += o.power_w;
      acc.min_sinr_db = std::min(acc.min_sinr_db, o.min_sinr_db);
      ++acc.steps;
    };
  }
  auto on_episode = [&](const std::vector<EpisodeReport>&) {
    per_episode.push_back(acc);
    acc = Acc{};
  };

  EvalSummary s;
  s.run = run_evaluation(env, agents, episodes, seed, on_episode, observer);
  s.episodes = episodes;
  long long steps = 0;
  long long feasible_reports = 0;
  long long reports = 0;
  std::map<std::string, long long> viol;
  for (const auto& spec : agents.front().constraints().specs()) {
    if (spec.kind != ConstraintKind::CumulativeInequality) viol[spec.id] = 0;
  }
  for (const auto& ep : s.run.episodes) {
    for (const auto& r : ep) {
      ++reports;
      s.mean_return += r.ret;
      steps += r.steps;
      feasible_reports += r.infeasible_steps == 0 ? 1 : 0;
      s.override_rate += r.shield_overrides;
      s.collision_rate += r.collisions;
      for (const auto& [id, k] : r.violation_steps) viol[id] += k;
    }
  }
  s.mean_return /= static_cast<double>(std::max<long long>(reports, 1));
  s.feasible_probability = static_cast<double>(feasible_reports) / static_cast<double>(std::max<long long>(reports, 1));
  const double denom = static_cast<double>(std::max<long long>(steps, 1));
  s.override_rate /= denom;
  s.collision_rate /= denom;
  for (const auto& [id, k] : viol) s.violation_rate[id] = static_cast<double>(k) / denom;

  if (ris) {
    double energy = 0.0;
    std::string rows = "episode,feasible,energy_cost_watts,min_sinr_db\n";
    for (std::size_t e = 0; e < per_episode.size(); ++e) {
      const auto& a = per_episode[e];
      const double p = a.steps > 0 ? a.power / a.steps : 0.0;
      energy += p;
      rows += fmt::format("{},{},{:.12g},{:.12g}\n", e, a.feasible ? 1 : 0, p, a.min_sinr_db);
    }
    s.mean_energy_w = per_episode.empty() ? 0.0 : energy / static_cast<double>(per_episode.size());
    if (ris_rows) *ris_rows = rows;
  }
  return s;
}

EvalSummary cmd_eval(const RunConfig& cfg, const std::string& dir) {
  cfg.validate();
  fs::create_directories(dir);
  write_text_file((fs::path(dir) / "config.resolved.json").string(), to_json(cfg).dump(2) + "\n");

  auto env = make_environment(cfg);
  auto agents = make_run_agents(*env, cfg);
  const std::string ckpt = cfg.checkpoint_dir.empty() ? (fs::path(dir) / "checkpoints").string() : cfg.checkpoint_dir;
  for (std::size_t n = 0; n < agents.size(); ++n) {
    const std::string path = checkpoint_path(ckpt, n);
    try {
      agents[n].q().load_checkpoint(read_text_file(path));
    } catch (const ParseError& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }

  std::string ris_rows;
  EvalSummary s = evaluate_agents(*env, agents, cfg.eval_episodes, derive_seed(cfg.seed, 0xE7A1), &ris_rows);

  {
    MetricsWriter metrics((fs::path(dir) / "eval_metrics.csv").string(), agents.front().constraints());
    for (const auto& ep : s.run.episodes) metrics.write(ep);
  }
  std::string header = "episodes,mean_return,feasible_probability,override_rate,collision_rate";
  std::string row = fmt::format("{},{:.12g},{:.12g},{:.12g},{:.12g}", s.episodes, s.mean_return,
                                s.feasible_probability, s.override_rate, s.collision_rate);
  for (const auto& [id, v] : s.violation_rate) {
    header += ",violation_rate_" + id;
    row += fmt::format(",{:.12g}", v);
  }
  if (cfg.env == EnvKind::Ris) {
    header += ",energy_cost_watts";
    row += fmt::format(",{:.12g}", s.mean_energy_w);
    write_text_file((fs::path(dir) / "ris_eval.csv").string(), ris_rows);
  }
  write_text_file((fs::path(dir) / "eval_summary.csv").string(), header + "\n" + row + "\n");
  return s;
}

OracleBenchmarkConfig oracle_benchmark_config(const RunConfig& cfg) {
  OracleBenchmarkConfig b;
  b.num_states = cfg.cmdp.states;
  b.num_actions = cfg.cmdp.actions;
  b.num_constraints = cfg.cmdp.constraints;
  b.gamma = cfg.cmdp.gamma;
  b.budget_fraction = cfg.cmdp.budget_fraction;
  b.episodes = cfg.episodes;
  b.agent = cfg.agent;
  b.feasibility_tolerance = cfg.cmdp.feasibility_tolerance;
  b.value_ratio = cfg.cmdp.value_ratio;
  return b;
}

OracleOutcome cmd_oracle_check(const RunConfig& cfg, const std::string& dir) {
  cfg.validate();
  fs::create_directories(dir);
  write_text_file((fs::path(dir) / "config.resolved.json").string(), to_json(cfg).dump(2) + "\n");
  OracleOutcome out;
  out.rows = run_oracle_benchmark(cfg.cmdp.oracle_seeds, oracle_benchmark_config(cfg));
  out.all_pass = !out.rows.empty();
  for (const auto& r : out.rows) out.all_pass = out.all_pass && r.pass;
  write_text_file((fs::path(dir) / "oracle_check.csv").string(), oracle_csv(out.rows));
  return out;
}

}  // namespace safeq
