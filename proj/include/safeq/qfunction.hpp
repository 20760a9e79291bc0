#pragma once

// Action-value approximators behind one contract: a dense table for exact
// small problems and a network with a frozen target copy.

#include <memory>
#include <optional>
#include <unordered_map>
#include <span>
#include <string>
#include <vector>

#include "safeq/neuralnet.hpp"
#include "safeq/replay.hpp"
#include "safeq/types.hpp"

namespace safeq {

/// Maps discrete actions onto network outputs. Flat: one output per action.
/// Factored: one output block per mixed-radix digit, Q(s, a) being the sum of
/// the outputs selected by a's digits.
class ActionLayout {
 public:
  static ActionLayout flat(int num_actions);
  static ActionLayout factored(std::vector<int> radices);

  bool is_factored() const { return factored_; }
  int num_actions() const { return num_actions_; }
  int output_size() const { return output_size_; }
  const std::vector<int>& radices() const { return radices_; }

  /// Output indices whose sum is Q(s, action).
  std::vector<int> heads(int action) const;
  /// Full per-action values from raw network outputs.
  VectorXd expand(const VectorXd& outputs) const;
  /// Lowest-index argmax over all actions without expanding (factored only).
  int unmasked_argmax(const VectorXd& outputs) const;
  /// Per-digit masks when `mask` is a Cartesian product of digit subsets.
  std::optional<std::vector<ActionMask>> product_decomposition(const ActionMask& mask) const;
  /// Lowest-index argmax restricted to a product set; -1 if some digit set is empty.
  int product_argmax(const VectorXd& outputs, const std::vector<ActionMask>& digit_masks) const;

 private:
  bool factored_ = false;
  int num_actions_ = 0;
  int output_size_ = 0;
  std::vector<int> radices_;
  std::vector<int> offsets_;
};

/// Lowest-index argmax of values over entries with mask true; -1 if none.
int masked_argmax(const VectorXd& values, const ActionMask& mask);

class ActionValueFunction {
 public:
  virtual ~ActionValueFunction() = default;

  virtual int num_actions() const = 0;
  virtual VectorXd values(const VectorXd& obs) const = 0;
  /// Values from the bootstrap source (the frozen target where one exists).
  virtual VectorXd target_values(const VectorXd& obs) const = 0;
  virtual double max_target(const VectorXd& obs, const ActionMask& mask) const;
  virtual int greedy(const VectorXd& obs, const ActionMask& mask) const;
  /// Moves Q(obs_i, action_i) towards targets(i); returns the pre-update mean squared error.
  virtual double update(std::span<const Transition* const> batch, const VectorXd& targets) = 0;
  virtual std::string checkpoint() const = 0;
  virtual void load_checkpoint(std::string_view bytes) = 0;
};

/// Dense S x A table; observations must be one-hot state indicators.
class QTable final : public ActionValueFunction {
 public:
  QTable(int num_states, int num_actions, double learning_rate);

  int num_actions() const override { return static_cast<int>(q_.cols()); }
  int num_states() const { return static_cast<int>(q_.rows()); }
  VectorXd values(const VectorXd& obs) const override;
  VectorXd target_values(const VectorXd& obs) const override { return values(obs); }
  double update(std::span<const Transition* const> batch, const VectorXd& targets) override;
  std::string checkpoint() const override;
  void load_checkpoint(std::string_view bytes) override;

  static int state_index(const VectorXd& obs);
  const MatrixXd& table() const { return q_; }
  MatrixXd& table() { return q_; }
  /// alpha / (1 + visits / 1000)
  double step_size(int s, int a) const;

 private:
  MatrixXd q_;
  Eigen::MatrixXi visits_;
  double learning_rate_;
};

struct NeuralQConfig {
  std::vector<int> hidden{128, 128};
  AdamConfig adam;
  int target_sync = 100;  // gradient steps between target copies
  bool factored_head = false;
};

class NeuralQ final : public ActionValueFunction {
 public:
  NeuralQ(int obs_size, std::vector<int> radices, const NeuralQConfig& cfg, Rng& rng);

  int num_actions() const override { return layout_.num_actions(); }
  VectorXd values(const VectorXd& obs) const override;
  VectorXd target_values(const VectorXd& obs) const override;
  double max_target(const VectorXd& obs, const ActionMask& mask) const override;
  int greedy(const VectorXd& obs, const ActionMask& mask) const override;
  double update(std::span<const Transition* const> batch, const VectorXd& targets) override;
  std::string checkpoint() const override { return serialize(net_); }
  void load_checkpoint(std::string_view bytes) override;

  const Network& network() const { return net_; }
  Network& network() { return net_; }
  const Network& target_network() const { return target_; }
  const ActionLayout& layout() const { return layout_; }
  std::int64_t gradient_steps() const { return steps_; }

 private:
  ActionLayout layout_;
  Network net_;
  Network target_;
  AdamState<double> opt_;
  int target_sync_;
  std::int64_t steps_ = 0;
  mutable std::unordered_map<ActionMask, std::optional<std::vector<ActionMask>>> product_cache_;

  const std::optional<std::vector<ActionMask>>& decomposition(const ActionMask& mask) const;
};

}  // namespace safeq
