#include "safeq/agent.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace safeq {

void AgentConfig::validate() const {
  training.validate();
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (buffer_capacity < batch_size) throw ConfigError("replay capacity must be >= batch size");
  if (update_period < 1) throw ConfigError("update period must be >= 1");
  if (!(epsilon_decay_fraction > 0.0 && epsilon_decay_fraction <= 1.0)) {
    throw ConfigError("epsilon decay fraction must lie in (0, 1]");
  }
  if (vhat_window < 1) throw ConfigError("cost-estimate window must be >= 1");
  for (int h : network.hidden) {
    if (h < 1) throw ConfigError("hidden layer sizes must be positive");
  }
  if (!(network.adam.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

double epsilon_schedule(int episode, int total_episodes, double fraction) {
  const double horizon = fraction * static_cast<double>(std::max(total_episodes, 1));
  return std::clamp(1.0 - static_cast<double>(episode) / horizon, 0.0, 1.0);
}

int uniform_safe_action(const ActionMask& mask, Rng& rng) {
  const auto n = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  if (n == 0) throw ConfigError("safe action set is empty");
  std::size_t k = uniform_index(rng, n);
  for (std::size_t a = 0; a < mask.size(); ++a) {
    if (mask[a] && k-- == 0) return static_cast<int>(a);
  }
  return -1;  // unreachable
}

int select_action(const VectorXd& values, const ActionMask& mask, double epsilon, Rng& rng) {
  if (uniform01(rng) < epsilon) return uniform_safe_action(mask, rng);
  const int a = masked_argmax(values, mask);
  if (a < 0) throw ConfigError("safe action set is empty");
  return a;
}

int stage2_grid_refine(const VectorXd& q, std::span<const int> candidates, const std::function<bool(int)>& feasible,
                       int fallback) {
  if (candidates.empty()) throw ConfigError("stage-2 candidate grid is empty");
  int best = -1;
  for (int a : candidates) {
    if (!feasible(a)) continue;
    if (best < 0 || q(a) > q(best) || (q(a) == q(best) && a < best)) best = a;
  }
  return best < 0 ? fallback : best;
}

bool ensure_nonempty(ActionMask& mask, int fallback) {
  if (std::find(mask.begin(), mask.end(), true) != mask.end()) return false;
  mask.at(static_cast<std::size_t>(fallback)) = true;
  return true;
}

VectorXd augmented_target(std::span<const Transition* const> batch, const ActionValueFunction& q,
                          const DualState& duals, const ConstraintSet& specs, const TrainingConfig& cfg,
                          bool penalties_enabled) {
  VectorXd y(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& t = *batch[i];
    double target = t.reward;
    if (penalties_enabled) target -= penalty_step(t.costs, duals, specs, cfg);
    if (!t.terminal) target += cfg.gamma * q.max_target(t.next_obs, t.next_mask);
    if (!std::isfinite(target)) {
      throw NumericalError(fmt::format("non-finite augmented target {} for transition (action {}, reward {}, terminal {})",
                                       target, t.action, t.reward, t.terminal));
    }
    y(static_cast<Eigen::Index>(i)) = target;
  }
  return y;
}

SafeAgent::SafeAgent(const AgentConfig& cfg, ConstraintSet specs, int obs_size, std::vector<int> action_radices,
                     std::uint64_t seed)
    : cfg_(cfg),
      specs_(std::move(specs)),
      duals_(initial_duals(specs_, cfg.duals)),
      buffer_(static_cast<std::size_t>(cfg.buffer_capacity)),
      rng_(seed) {
  cfg_.validate();
  if (cfg_.tabular) {
    long long actions = 1;
    for (int r : action_radices) actions *= r;
    q_ = std::make_unique<QTable>(obs_size, static_cast<int>(actions), cfg_.tabular_learning_rate);
  } else {
    Rng init(derive_seed(seed, 0xA11CE));
    q_ = std::make_unique<NeuralQ>(obs_size, std::move(action_radices), cfg_.network, init);
  }
}

int SafeAgent::act(const VectorXd& obs, const ActionMask& mask, double epsilon) {
  if (uniform01(rng_) < epsilon) return uniform_safe_action(mask, rng_);
  const int a = q_->greedy(obs, mask);
  if (a < 0) throw ConfigError("safe action set is empty");
  return a;
}

int SafeAgent::greedy(const VectorXd& obs, const ActionMask& mask) const { return q_->greedy(obs, mask); }

std::optional<double> SafeAgent::observe(Transition t) {
  buffer_.push(std::move(t));
  ++env_steps_;
  if (buffer_.size() >= static_cast<std::size_t>(cfg_.batch_size) && env_steps_ % cfg_.update_period == 0) {
    return learn_step();
  }
  return std::nullopt;
}

double SafeAgent::learn_step() {
  const auto batch = buffer_.sample(static_cast<std::size_t>(cfg_.batch_size), rng_);
  const VectorXd y = augmented_target(batch, *q_, duals_, specs_, cfg_.training, cfg_.penalties_enabled);
  return q_->update(batch, y);
}

void SafeAgent::end_of_episode(const EpisodeCostStats& stats) {
  ++episodes_;
  vhat_history_.push_back(stats.vhat_c);
  while (static_cast<int>(vhat_history_.size()) > cfg_.vhat_window) vhat_history_.pop_front();

  EpisodeCostStats smoothed = stats;
  for (auto& [id, v] : smoothed.vhat_c) {
    double sum = 0.0;
    for (const auto& h : vhat_history_) sum += h.at(id);
    v = sum / static_cast<double>(vhat_history_.size());
  }
  last_input_ = smoothed;

  if (!cfg_.penalties_enabled || episodes_ % cfg_.training.dual_update_period != 0) return;
  duals_ = dual_ascent(duals_, specs_, smoothed.vhat_c, smoothed.mean_e, smoothed.mean_gplus);
  duals_ = scale_penalties(duals_, violated_constraints(smoothed, specs_, cfg_.training));
}

}  // namespace safeq
