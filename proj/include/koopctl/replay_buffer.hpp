#pragma once

#include <cstdint>
#include <vector>

#include "koopctl/random.hpp"
#include "koopctl/tensor.hpp"

namespace koopctl {

/// One step of experience in observation space.
struct Transition {
  Vector x;
  Vector u;
  Vector x_next;
  double r = 0.0;
  double d = 0.0;  // 0 or 1
};

/// Column-stacked batch, one transition per row.
struct TransitionBatch {
  Matrix x;
  Matrix u;
  Matrix x_next;
  Vector r;
  Vector d;

  Index size() const { return x.rows(); }
};

/// Ring buffer of transitions with FIFO overwrite at capacity.
class ReplayBuffer {
 public:
  ReplayBuffer(Index obs_dim, Index control_dim, Index capacity);

  /// Throws NumericError on non-finite fields or d outside {0, 1}.
  void push(const Transition& t);

  Index size() const { return size_; }
  Index capacity() const { return capacity_; }
  Index cursor() const { return cursor_; }
  Index obs_dim() const { return obs_dim_; }
  Index control_dim() const { return control_dim_; }

  /// Uniform with replacement over filled slots. Throws UsageError on an empty buffer.
  std::vector<Index> sample_indices(Index batch, Rng& rng) const;
  TransitionBatch gather(const std::vector<Index>& slots) const;
  TransitionBatch sample(Index batch, Rng& rng) const;
  std::vector<Transition> sample(Index batch, std::uint64_t seed) const;

  /// Transition at slot i (0 <= i < size).
  Transition at(Index slot) const;
  /// The n most recently pushed transitions, oldest first.
  TransitionBatch latest(Index n) const;

  /// Filled rows in slot order: [x | u | x_next | r | d]. With cursor() this is the full state.
  Matrix export_rows() const;
  void import_rows(const Matrix& rows, Index cursor);

 private:
  Index row_width() const { return 2 * obs_dim_ + control_dim_ + 2; }

  Index obs_dim_, control_dim_, capacity_;
  Index size_ = 0;
  Index cursor_ = 0;
  std::vector<double> storage_;  // row-major, grown on demand up to capacity rows
};

}  // namespace koopctl
