#pragma once

// Explicit finite CMDPs: random instance generation, exact policy evaluation
// by dense linear solve, exhaustive best-feasible-deterministic search, an
// environment wrapper, and the benchmark that pits tabular Safe-Q-Learning
// against the exact oracle.

#include <cstdint>
#include <string>
#include <vector>

#include "safeq/agent.hpp"
#include "safeq/env.hpp"
#include "safeq/types.hpp"

namespace safeq {

struct CmdpSpec {
  int num_states = 0;
  int num_actions = 0;
  std::vector<MatrixXd> transitions;  // per action: S x S, rows sum to 1
  MatrixXd reward;                    // S x A
  std::vector<MatrixXd> costs;        // cumulative costs c_i, S x A each
  std::vector<double> budgets;        // d_i
  std::vector<MatrixXd> inst_costs;   // optional instantaneous g_k, S x A each
  std::vector<MatrixXd> eq_costs;     // optional equality e_j, S x A each
  double gamma = 0.9;
  VectorXd initial;  // initial state distribution

  void validate() const;
  std::string cost_id(std::size_t i) const { return "cost_" + std::to_string(i); }
  std::string inst_id(std::size_t k) const { return "g_" + std::to_string(k); }
  std::string eq_id(std::size_t j) const { return "e_" + std::to_string(j); }
};

using DeterministicPolicy = std::vector<int>;

CmdpSpec random_cmdp(std::uint64_t seed, int num_states, int num_actions, int num_constraints, double gamma = 0.9,
                     double budget_fraction = 0.7);

/// Per-state discounted value of a per-step signal (S x A) under a policy.
VectorXd evaluate_signal(const CmdpSpec& spec, const DeterministicPolicy& policy, const MatrixXd& signal,
                         double* residual = nullptr);

struct PolicyValue {
  double reward = 0.0;
  std::vector<double> costs;
  VectorXd reward_by_state;
  double residual = 0.0;  // max |(I - gamma P_pi) v - r_pi|
};

PolicyValue policy_value(const CmdpSpec& spec, const DeterministicPolicy& policy);

/// Greedy policy of value iteration on an arbitrary per-step signal.
DeterministicPolicy value_iteration(const CmdpSpec& spec, const MatrixXd& signal, VectorXd* values = nullptr,
                                    double tol = 1e-13);

struct OracleResult {
  bool feasible_exists = false;
  DeterministicPolicy policy;
  double v_r = 0.0;
  std::vector<double> v_c;
  std::size_t enumerated = 0;
};

/// Exhaustive search over all A^S deterministic stationary policies.
OracleResult best_feasible_deterministic(const CmdpSpec& spec, std::size_t max_policies = 1'000'000);

/// Single-agent environment over a CmdpSpec with one-hot observations.
class CmdpEnv final : public Environment {
 public:
  explicit CmdpEnv(CmdpSpec spec);

  int num_agents() const override { return 1; }
  int observation_size() const override { return spec_.num_states; }
  int num_actions() const override { return spec_.num_actions; }
  ConstraintSet constraints() const override;
  std::vector<VectorXd> reset(std::uint64_t seed) override;
  ActionMask safe_action_mask(int) const override { return ActionMask(spec_.num_actions, true); }
  int fallback_action(int) const override { return 0; }
  std::vector<EnvStep> step(std::span<const int> actions) override;
  std::string name() const override { return "cmdp"; }

  const CmdpSpec& spec() const { return spec_; }
  int state() const { return state_; }

 private:
  VectorXd one_hot(int s) const;
  int sample_next(int s, int a);

  CmdpSpec spec_;
  Rng rng_;
  int state_ = 0;
};

/// Greedy deterministic policy read off a trained single agent.
DeterministicPolicy greedy_policy(const SafeAgent& agent, int num_states);

struct OracleBenchmarkConfig {
  int num_states = 5;
  int num_actions = 3;
  int num_constraints = 1;
  double gamma = 0.9;
  double budget_fraction = 0.7;
  int episodes = 500;
  AgentConfig agent;
  double feasibility_tolerance = 1e-2;
  double value_ratio = 0.95;
  /// Report the best greedy iterate whose on-policy estimates meet the budgets
  /// (see select_feasible_iterate) instead of the final one.
  bool select_iterate = true;
  int selection_min_episodes = 5;
};

/// On-policy statistics of one greedy policy over the episodes it was held fixed.
struct IterateStats {
  DeterministicPolicy policy;
  int episodes = 0;
  double reward_sum = 0.0;          // discounted returns
  std::vector<double> cost_sums;    // discounted costs per constraint
};

/// Highest mean discounted return among iterates with >= min_episodes whose
/// mean discounted costs are within budget; -1 if none qualifies.
int select_feasible_iterate(const std::vector<IterateStats>& iterates, const std::vector<double>& budgets,
                            int min_episodes);

struct OracleRow {
  std::uint64_t seed = 0;
  bool oracle_feasible = false;
  double v_r = 0.0;
  double v_r_star = 0.0;
  std::vector<double> v_c;
  std::vector<double> budgets;
  bool feasible = false;
  double ratio = 0.0;
  bool pass = false;
  long long env_steps = 0;
  DeterministicPolicy learned;
  DeterministicPolicy best;
  DeterministicPolicy final_policy;  // greedy policy after the last episode
  double final_v_r = 0.0;
  bool final_feasible = false;
  int selected_episodes = 0;  // 0 when the final iterate is reported
};

std::vector<OracleRow> run_oracle_benchmark(const std::vector<std::uint64_t>& seeds, const OracleBenchmarkConfig& cfg);

std::string oracle_csv(const std::vector<OracleRow>& rows);

}  // namespace safeq
