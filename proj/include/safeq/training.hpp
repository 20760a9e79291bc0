#pragma once

#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "safeq/agent.hpp"
#include "safeq/env.hpp"

namespace safeq {

struct EpisodeReport {
  int episode = 0;
  int agent = 0;
  double ret = 0.0;
  EpisodeCostStats stats;
  /// Steps in which each instantaneous constraint was violated (g > tol or |e| > tol).
  std::map<std::string, int> violation_steps;
  int steps = 0;
  int violations = 0;  // steps with any violated instantaneous constraint
  int collisions = 0;
  int shield_overrides = 0;
  int mask_fallbacks = 0;
  int infeasible_steps = 0;
  double epsilon = 0.0;
  double loss_mean = 0.0;
  int loss_count = 0;
  bool aborted = false;
  std::string abort_reason;
  DualState duals;  // after the end-of-episode update
};

struct EpisodeOptions {
  double epsilon = 0.0;
  bool learn = true;
  bool update_duals = true;
};

/// Called after every joint step with the intended actions and per-agent results.
using StepObserver =
    std::function<void(int t, const Environment& env, std::span<const int> intended, const std::vector<EnvStep>& steps)>;

/// One episode of (multi-agent) Safe-Deep Q-Learning: act on the safe set,
/// joint step, store, learn on the step cadence, then dual updates at the end.
std::vector<EpisodeReport> run_episode(Environment& env, std::vector<SafeAgent>& agents, int episode,
                                       std::uint64_t env_seed, const EpisodeOptions& opts,
                                       const StepObserver& observer = {});

std::uint64_t episode_seed(std::uint64_t run_seed, int episode);

/// Builds one agent per environment agent with seeds derived from `seed`.
/// `specs` replaces env.constraints() when given.
std::vector<SafeAgent> make_agents(const Environment& env, const AgentConfig& cfg, std::uint64_t seed,
                                   const ConstraintSet* specs = nullptr);

struct RunArtifacts {
  std::vector<std::vector<EpisodeReport>> episodes;  // [episode][agent]
};

using EpisodeCallback = std::function<void(const std::vector<EpisodeReport>&)>;

RunArtifacts run_training(Environment& env, std::vector<SafeAgent>& agents, int episodes, std::uint64_t seed,
                          const EpisodeCallback& on_episode = {}, const StepObserver& observer = {});

/// Greedy evaluation with exploration off and duals frozen.
RunArtifacts run_evaluation(Environment& env, std::vector<SafeAgent>& agents, int episodes, std::uint64_t seed,
                            const EpisodeCallback& on_episode = {}, const StepObserver& observer = {});

/// First episode after which the violation count stays zero for `window`
/// consecutive episodes (all agents); -1 if never.
int convergence_episode(const RunArtifacts& run, int window = 200);

/// Per-episode metrics CSV with a fixed column layout derived from the constraint set.
class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, const ConstraintSet& specs);
  ~MetricsWriter();
  MetricsWriter(const MetricsWriter&) = delete;
  MetricsWriter& operator=(const MetricsWriter&) = delete;

  static std::string header(const ConstraintSet& specs);
  static std::string row(const EpisodeReport& r, const ConstraintSet& specs);
  void write(const std::vector<EpisodeReport>& reports);

 private:
  std::FILE* file_ = nullptr;
  ConstraintSet specs_;
};

}  // namespace safeq
