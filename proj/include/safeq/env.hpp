#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "safeq/lagrangian.hpp"
#include "safeq/types.hpp"

namespace safeq {

/// Result of one joint environment step for a single agent.
struct EnvStep {
  VectorXd obs;
  double reward = 0.0;
  CostSample costs;
  bool terminal = false;
  bool failure = false;          // episode ended by a fault (e.g. battery depleted)
  bool violation = false;        // executed outcome violates an instantaneous constraint
  bool collision = false;        // executed separation below the safety distance
  bool overridden = false;       // safety shield replaced the intended action
  bool feasible = true;          // all instantaneous constraints satisfied after execution
};

/// Multi-agent environment stepped jointly; single-agent environments report one agent.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual int num_agents() const = 0;
  virtual int observation_size() const = 0;
  virtual int num_actions() const = 0;
  /// Mixed-radix digit sizes (least significant first) whose product is
  /// num_actions(); a single entry when the action space has no structure.
  virtual std::vector<int> action_radices() const { return {num_actions()}; }
  virtual ConstraintSet constraints() const = 0;

  virtual std::vector<VectorXd> reset(std::uint64_t seed) = 0;
  /// Actions whose deterministically checkable constraints are satisfiable now.
  virtual ActionMask safe_action_mask(int agent) const = 0;
  virtual int fallback_action(int agent) const = 0;
  virtual std::vector<EnvStep> step(std::span<const int> actions) = 0;

  virtual void set_shield_enabled(bool) {}
  virtual bool shield_enabled() const { return false; }
  virtual std::string name() const = 0;
};

}  // namespace safeq
