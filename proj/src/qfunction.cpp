#include "safeq/qfunction.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <limits>
#include <sstream>

namespace safeq {

ActionLayout ActionLayout::flat(int num_actions) {
  if (num_actions <= 0) throw ConfigError("action space must be non-empty");
  ActionLayout l;
  l.num_actions_ = l.output_size_ = num_actions;
  l.radices_ = {num_actions};
  l.offsets_ = {0};
  return l;
}

ActionLayout ActionLayout::factored(std::vector<int> radices) {
  if (radices.empty()) throw ConfigError("factored layout needs at least one digit");
  ActionLayout l;
  l.factored_ = true;
  long long total = 1;
  for (int r : radices) {
    if (r <= 0) throw ConfigError("radices must be positive");
    l.offsets_.push_back(l.output_size_);
    l.output_size_ += r;
    total *= r;
    if (total > (1LL << 30)) throw ConfigError("action space too large");
  }
  l.num_actions_ = static_cast<int>(total);
  l.radices_ = std::move(radices);
  return l;
}

std::vector<int> ActionLayout::heads(int action) const {
  if (action < 0 || action >= num_actions_) throw ConfigError("action index out of range");
  if (!factored_) return {action};
  std::vector<int> out;
  out.reserve(radices_.size());
  for (std::size_t d = 0; d < radices_.size(); ++d) {
    out.push_back(offsets_[d] + action % radices_[d]);
    action /= radices_[d];
  }
  return out;
}

VectorXd ActionLayout::expand(const VectorXd& outputs) const {
  if (!factored_) return outputs;
  VectorXd values(num_actions_);
  std::vector<int> digit(radices_.size(), 0);
  for (int a = 0; a < num_actions_; ++a) {
    double v = 0.0;
    for (std::size_t d = 0; d < radices_.size(); ++d) v += outputs(offsets_[d] + digit[d]);
    values(a) = v;
    for (std::size_t d = 0; d < radices_.size(); ++d) {
      if (++digit[d] < radices_[d]) break;
      digit[d] = 0;
    }
  }
  return values;
}

int ActionLayout::unmasked_argmax(const VectorXd& outputs) const {
  int action = 0;
  int stride = 1;
  for (std::size_t d = 0; d < radices_.size(); ++d) {
    int best = 0;
    for (int k = 1; k < radices_[d]; ++k) {
      if (outputs(offsets_[d] + k) > outputs(offsets_[d] + best)) best = k;
    }
    action += best * stride;
    stride *= radices_[d];
  }
  return action;
}

std::optional<std::vector<ActionMask>> ActionLayout::product_decomposition(const ActionMask& mask) const {
  if (static_cast<int>(mask.size()) != num_actions_) throw ConfigError("mask length does not match action space");
  std::vector<ActionMask> digits;
  for (int r : radices_) digits.emplace_back(r, false);
  std::vector<int> digit(radices_.size(), 0);
  long long allowed = 0;
  for (int a = 0; a < num_actions_; ++a) {
    if (mask[a]) {
      ++allowed;
      for (std::size_t d = 0; d < radices_.size(); ++d) digits[d][digit[d]] = true;
    }
    for (std::size_t d = 0; d < radices_.size(); ++d) {
      if (++digit[d] < radices_[d]) break;
      digit[d] = 0;
    }
  }
  long long product = 1;
  for (const auto& m : digits) product *= std::count(m.begin(), m.end(), true);
  if (product != allowed) return std::nullopt;
  return digits;
}

int ActionLayout::product_argmax(const VectorXd& outputs, const std::vector<ActionMask>& digit_masks) const {
  int action = 0;
  int stride = 1;
  for (std::size_t d = 0; d < radices_.size(); ++d) {
    int best = -1;
    for (int k = 0; k < radices_[d]; ++k) {
      if (!digit_masks[d][k]) continue;
      if (best < 0 || outputs(offsets_[d] + k) > outputs(offsets_[d] + best)) best = k;
    }
    if (best < 0) return -1;
    action += best * stride;
    stride *= radices_[d];
  }
  return action;
}

int masked_argmax(const VectorXd& values, const ActionMask& mask) {
  int best = -1;
  for (Eigen::Index a = 0; a < values.size(); ++a) {
    if (!mask[a]) continue;
    if (best < 0 || values(a) > values(best)) best = static_cast<int>(a);
  }
  return best;
}

namespace {

bool all_true(const ActionMask& mask) {
  for (bool b : mask) {
    if (!b) return false;
  }
  return true;
}

}  // namespace

double ActionValueFunction::max_target(const VectorXd& obs, const ActionMask& mask) const {
  const VectorXd v = target_values(obs);
  const int a = masked_argmax(v, mask);
  if (a < 0) throw ConfigError("bootstrap mask has no safe action");
  return v(a);
}

int ActionValueFunction::greedy(const VectorXd& obs, const ActionMask& mask) const {
  return masked_argmax(values(obs), mask);
}

// ---------------------------------------------------------------------------

QTable::QTable(int num_states, int num_actions, double learning_rate)
    : q_(MatrixXd::Zero(num_states, num_actions)),
      visits_(Eigen::MatrixXi::Zero(num_states, num_actions)),
      learning_rate_(learning_rate) {
  if (num_states <= 0 || num_actions <= 0) throw ConfigError("table dimensions must be positive");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw ConfigError("tabular learning rate must lie in (0, 1]");
}

int QTable::state_index(const VectorXd& obs) {
  Eigen::Index s = 0;
  if (obs.size() == 0 || obs.maxCoeff(&s) != 1.0 || obs.sum() != 1.0) {
    throw ConfigError("tabular Q-function requires one-hot observations");
  }
  return static_cast<int>(s);
}

VectorXd QTable::values(const VectorXd& obs) const {
  if (obs.size() != q_.rows()) throw ConfigError("observation size does not match table");
  return q_.row(state_index(obs)).transpose();
}

double QTable::step_size(int s, int a) const { return learning_rate_ / (1.0 + visits_(s, a) / 1000.0); }

double QTable::update(std::span<const Transition* const> batch, const VectorXd& targets) {
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int s = state_index(batch[i]->obs);
    const int a = batch[i]->action;
    const double err = targets(static_cast<Eigen::Index>(i)) - q_(s, a);
    loss += err * err;
    q_(s, a) += step_size(s, a) * err;
    ++visits_(s, a);
  }
  return batch.empty() ? 0.0 : loss / static_cast<double>(batch.size());
}

std::string QTable::checkpoint() const {
  std::string out = fmt::format("SAFEQTAB1 {} {}\n", q_.rows(), q_.cols());
  for (Eigen::Index s = 0; s < q_.rows(); ++s) {
    for (Eigen::Index a = 0; a < q_.cols(); ++a) {
      out += fmt::format("{}{:.17g}", a == 0 ? "" : " ", q_(s, a));
    }
    out += '\n';
  }
  return out;
}

void QTable::load_checkpoint(std::string_view bytes) {
  std::istringstream in{std::string(bytes)};
  std::string magic;
  Eigen::Index rows = 0, cols = 0;
  in >> magic >> rows >> cols;
  if (magic != "SAFEQTAB1") throw ParseError("bad tabular checkpoint magic", 0);
  if (rows != q_.rows() || cols != q_.cols()) throw ConfigError("tabular checkpoint shape mismatch");
  for (Eigen::Index s = 0; s < rows; ++s) {
    for (Eigen::Index a = 0; a < cols; ++a) {
      if (!(in >> q_(s, a))) throw ParseError("truncated tabular checkpoint", static_cast<std::size_t>(in.tellg()));
    }
  }
}

// ---------------------------------------------------------------------------

NeuralQ::NeuralQ(int obs_size, std::vector<int> radices, const NeuralQConfig& cfg, Rng& rng)
    : layout_(cfg.factored_head ? ActionLayout::factored(radices)
                                : ActionLayout::flat([&] {
                                    long long n = 1;
                                    for (int r : radices) n *= r;
                                    return static_cast<int>(n);
                                  }())),
      target_sync_(cfg.target_sync) {
  if (target_sync_ < 1) throw ConfigError("target sync period must be >= 1");
  std::vector<int> dims{obs_size};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(layout_.output_size());
  net_ = Network::glorot(dims, rng);
  sync_target(net_, target_);
  opt_ = AdamState<double>::create(net_, cfg.adam);
}

VectorXd NeuralQ::values(const VectorXd& obs) const { return layout_.expand(net_.forward(obs)); }

VectorXd NeuralQ::target_values(const VectorXd& obs) const { return layout_.expand(target_.forward(obs)); }

const std::optional<std::vector<ActionMask>>& NeuralQ::decomposition(const ActionMask& mask) const {
  auto it = product_cache_.find(mask);
  if (it == product_cache_.end()) it = product_cache_.emplace(mask, layout_.product_decomposition(mask)).first;
  return it->second;
}

double NeuralQ::max_target(const VectorXd& obs, const ActionMask& mask) const {
  if (layout_.is_factored()) {
    const VectorXd out = target_.forward(obs);
    int a = -1;
    if (all_true(mask)) {
      a = layout_.unmasked_argmax(out);
    } else if (const auto& digits = decomposition(mask)) {
      a = layout_.product_argmax(out, *digits);
    } else {
      a = masked_argmax(layout_.expand(out), mask);
    }
    if (a < 0) throw ConfigError("bootstrap mask has no safe action");
    double total = 0.0;
    for (int h : layout_.heads(a)) total += out(h);
    return total;
  }
  return ActionValueFunction::max_target(obs, mask);
}

int NeuralQ::greedy(const VectorXd& obs, const ActionMask& mask) const {
  if (layout_.is_factored()) {
    const VectorXd out = net_.forward(obs);
    if (all_true(mask)) return layout_.unmasked_argmax(out);
    if (const auto& digits = decomposition(mask)) return layout_.product_argmax(out, *digits);
    return masked_argmax(layout_.expand(out), mask);
  }
  return ActionValueFunction::greedy(obs, mask);
}

double NeuralQ::update(std::span<const Transition* const> batch, const VectorXd& targets) {
  MatrixXd inputs(net_.input_size(), static_cast<Eigen::Index>(batch.size()));
  std::vector<std::vector<int>> heads;
  heads.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    inputs.col(static_cast<Eigen::Index>(i)) = batch[i]->obs;
    heads.push_back(layout_.heads(batch[i]->action));
  }
  const double loss = train_step_heads(net_, opt_, inputs, heads, targets);
  if (++steps_ % target_sync_ == 0) sync_target(net_, target_);
  return loss;
}

void NeuralQ::load_checkpoint(std::string_view bytes) {
  Network loaded = deserialize(bytes);
  if (!loaded.same_shape(net_)) throw ConfigError("checkpoint network shape does not match the environment");
  net_ = loaded;
  target_ = loaded;
}

}  // namespace safeq
