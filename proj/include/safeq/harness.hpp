#pragma once

// Run orchestration behind the CLI: environment construction, training with
// per-episode metrics, greedy evaluation from checkpoints, and the oracle check.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "safeq/cmdp.hpp"
#include "safeq/config.hpp"
#include "safeq/training.hpp"

namespace safeq {

std::unique_ptr<Environment> make_environment(const RunConfig& cfg);

/// Agents for `env` with the config's constraint declarations applied.
std::vector<SafeAgent> make_run_agents(const Environment& env, const RunConfig& cfg);

/// output_dir if set, else <root>/<env>_<mode>_seed<seed> where root is
/// `env_root` (normally $SAFEQ_OUT) or "runs".
std::string resolve_output_dir(const RunConfig& cfg, const char* env_root);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

struct TrainOutcome {
  RunArtifacts run;
  int convergence_episode = -1;
  std::string dir;
};

/// Trains and writes config.resolved.json, metrics.csv, summary.json and
/// checkpoints/agent_<n>.bin under `dir`.
TrainOutcome cmd_train(const RunConfig& cfg, const std::string& dir);

struct EvalSummary {
  int episodes = 0;
  double mean_return = 0.0;
  double feasible_probability = 0.0;  // episodes with every step feasible
  double override_rate = 0.0;         // per agent-step
  double collision_rate = 0.0;        // per agent-step
  std::map<std::string, double> violation_rate;  // per constraint, per agent-step
  double mean_energy_w = 0.0;         // RIS: mean transmit power
  RunArtifacts run;
};

/// Greedy evaluation of checkpoints (cfg.checkpoint_dir or <dir>/checkpoints).
/// Writes eval_summary.csv, eval_metrics.csv and, for RIS, ris_eval.csv.
EvalSummary cmd_eval(const RunConfig& cfg, const std::string& dir);

/// Evaluation of in-memory agents without touching the filesystem.
EvalSummary evaluate_agents(Environment& env, std::vector<SafeAgent>& agents, int episodes, std::uint64_t seed,
                            std::string* ris_rows = nullptr);

struct OracleOutcome {
  std::vector<OracleRow> rows;
  bool all_pass = false;
};

/// Runs the tabular benchmark on cfg.cmdp.oracle_seeds and writes oracle_check.csv.
OracleOutcome cmd_oracle_check(const RunConfig& cfg, const std::string& dir);

OracleBenchmarkConfig oracle_benchmark_config(const RunConfig& cfg);

}  // namespace safeq
