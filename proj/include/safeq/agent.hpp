#pragma once

// Safe-Deep Q-Learning agent: epsilon-greedy selection over the safe action
// set, augmented TD targets, and episode-level dual/penalty updates.

#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "safeq/lagrangian.hpp"
#include "safeq/qfunction.hpp"
#include "safeq/replay.hpp"

namespace safeq {

struct AgentConfig {
  TrainingConfig training;
  DualParams duals;
  bool penalties_enabled = true;

  bool tabular = false;
  double tabular_learning_rate = 0.5;
  NeuralQConfig network;

  int batch_size = 1024;
  int buffer_capacity = 50000;
  int update_period = 1;  // environment steps between gradient steps
  double epsilon_decay_fraction = 0.8;
  int vhat_window = 10;

  void validate() const;
};

/// Linear decay from 1 at the first episode to 0 once `fraction` of the run has elapsed.
double epsilon_schedule(int episode, int total_episodes, double fraction);

/// With probability epsilon a uniform draw over the safe set, otherwise the
/// lowest-index masked argmax of `values`.
int select_action(const VectorXd& values, const ActionMask& mask, double epsilon, Rng& rng);

/// Uniform draw over the entries with mask true.
int uniform_safe_action(const ActionMask& mask, Rng& rng);

/// y = r - phi_step + gamma * max_{a' safe} Q_target(s', a'), bootstrap dropped at terminals.
/// With penalties disabled phi_step is omitted (plain DQN target).
VectorXd augmented_target(std::span<const Transition* const> batch, const ActionValueFunction& q,
                          const DualState& duals, const ConstraintSet& specs, const TrainingConfig& cfg,
                          bool penalties_enabled = true);

/// Stage-2 refinement over a finite candidate grid: the feasible candidate with
/// the highest q (lowest index on ties), or `fallback` when none is feasible.
/// Throws ConfigError on an empty grid.
int stage2_grid_refine(const VectorXd& q, std::span<const int> candidates, const std::function<bool(int)>& feasible,
                       int fallback);

/// Forces the fallback action on when the mask is empty; returns true if it did.
bool ensure_nonempty(ActionMask& mask, int fallback);

class SafeAgent {
 public:
  SafeAgent(const AgentConfig& cfg, ConstraintSet specs, int obs_size, std::vector<int> action_radices,
            std::uint64_t seed);

  int act(const VectorXd& obs, const ActionMask& mask, double epsilon);
  int greedy(const VectorXd& obs, const ActionMask& mask) const;

  /// Stores the transition and, on the update cadence, takes one learning step.
  /// Returns the loss when a learning step happened.
  std::optional<double> observe(Transition t);
  double learn_step();

  /// Episode-boundary dual update: projected ascent then penalty scaling for
  /// violated ids. No-op when penalties are disabled or off-period.
  void end_of_episode(const EpisodeCostStats& stats);
  /// The smoothed statistics the last dual update consumed.
  const EpisodeCostStats& last_dual_input() const { return last_input_; }

  const DualState& duals() const { return duals_; }
  DualState& duals() { return duals_; }
  const ConstraintSet& constraints() const { return specs_; }
  const AgentConfig& config() const { return cfg_; }
  const ActionValueFunction& q() const { return *q_; }
  ActionValueFunction& q() { return *q_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  std::int64_t env_steps() const { return env_steps_; }
  int episodes_seen() const { return episodes_; }

 private:
  AgentConfig cfg_;
  ConstraintSet specs_;
  DualState duals_;
  std::unique_ptr<ActionValueFunction> q_;
  ReplayBuffer buffer_;
  Rng rng_;
  std::int64_t env_steps_ = 0;
  int episodes_ = 0;
  std::deque<IdMap> vhat_history_;
  EpisodeCostStats last_input_;
};

}  // namespace safeq
