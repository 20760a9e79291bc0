#pragma once

#include <cstddef>
#include <vector>

#include "safeq/lagrangian.hpp"
#include "safeq/types.hpp"

namespace safeq {

struct Transition {
  VectorXd obs;
  int action = 0;
  double reward = 0.0;
  VectorXd next_obs;
  CostSample costs;
  ActionMask next_mask;  // safe actions at next_obs
  bool terminal = false;
};

/// Fixed-capacity FIFO ring of transitions with uniform minibatch sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  /// i-th oldest stored transition.
  const Transition& at(std::size_t i) const;
  /// n distinct transitions drawn uniformly (Floyd's algorithm); n <= size().
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;
  /// Slot indices (oldest-relative) of a sample; exposed for frequency tests.
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::vector<Transition> ring_;
  std::size_t head_ = 0;  // next write position
  std::size_t size_ = 0;
};

}  // namespace safeq
