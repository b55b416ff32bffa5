#include "koopctl/replay_buffer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace koopctl {

ReplayBuffer::ReplayBuffer(Index obs_dim, Index control_dim, Index capacity)
    : obs_dim_(obs_dim), control_dim_(control_dim), capacity_(capacity) {
  if (capacity < 1) throw UsageError("ReplayBuffer: capacity must be >= 1");
}

void ReplayBuffer::push(const Transition& t) {
  if (t.x.size() != obs_dim_ || t.x_next.size() != obs_dim_ || t.u.size() != control_dim_) {
    throw DimensionError("ReplayBuffer::push: transition shape does not match buffer");
  }
  if (!t.x.allFinite() || !t.x_next.allFinite() || !t.u.allFinite() || !std::isfinite(t.r)) {
    throw NumericError("ReplayBuffer::push: non-finite transition rejected");
  }
  if (t.d != 0.0 && t.d != 1.0) throw NumericError("ReplayBuffer::push: done flag must be 0 or 1");

  const Index w = row_width();
  if (cursor_ >= size_) storage_.resize(static_cast<std::size_t>((cursor_ + 1) * w));
  double* row = storage_.data() + cursor_ * w;
  std::memcpy(row, t.x.data(), sizeof(double) * obs_dim_);
  std::memcpy(row + obs_dim_, t.u.data(), sizeof(double) * control_dim_);
  std::memcpy(row + obs_dim_ + control_dim_, t.x_next.data(), sizeof(double) * obs_dim_);
  row[w - 2] = t.r;
  row[w - 1] = t.d;

  cursor_ = (cursor_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

std::vector<Index> ReplayBuffer::sample_indices(Index batch, Rng& rng) const {
  if (size_ < 1 || batch < 1) {
    throw UsageError("ReplayBuffer::sample: buffer holds " + std::to_string(size_) + " transitions, batch " +
                     std::to_string(batch) + " requested");
  }
  std::uniform_int_distribution<Index> pick(0, size_ - 1);
  std::vector<Index> out(static_cast<std::size_t>(batch));
  for (auto& i : out) i = pick(rng);
  return out;
}

TransitionBatch ReplayBuffer::gather(const std::vector<Index>& slots) const {
  const Index n = static_cast<Index>(slots.size());
  const Index w = row_width();
  TransitionBatch b{Matrix(n, obs_dim_), Matrix(n, control_dim_), Matrix(n, obs_dim_), Vector(n), Vector(n)};
  for (Index i = 0; i < n; ++i) {
    const Index s = slots[static_cast<std::size_t>(i)];
    if (s < 0 || s >= size_) throw UsageError("ReplayBuffer::gather: slot out of range");
    const double* row = storage_.data() + s * w;
    for (Index j = 0; j < obs_dim_; ++j) b.x(i, j) = row[j];
    for (Index j = 0; j < control_dim_; ++j) b.u(i, j) = row[obs_dim_ + j];
    for (Index j = 0; j < obs_dim_; ++j) b.x_next(i, j) = row[obs_dim_ + control_dim_ + j];
    b.r(i) = row[w - 2];
    b.d(i) = row[w - 1];
  }
  return b;
}

TransitionBatch ReplayBuffer::sample(Index batch, Rng& rng) const { return gather(sample_indices(batch, rng)); }

std::vector<Transition> ReplayBuffer::sample(Index batch, std::uint64_t seed) const {
  Rng rng(derive_seed(seed, "buffer-sampler"));
  std::vector<Transition> out;
  for (Index s : sample_indices(batch, rng)) out.push_back(at(s));
  return out;
}

Transition ReplayBuffer::at(Index slot) const {
  TransitionBatch b = gather({slot});
  return {b.x.row(0).transpose(), b.u.row(0).transpose(), b.x_next.row(0).transpose(), b.r(0), b.d(0)};
}

TransitionBatch ReplayBuffer::latest(Index n) const {
  if (n > size_) throw UsageError("ReplayBuffer::latest: not enough transitions");
  std::vector<Index> slots(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) slots[static_cast<std::size_t>(i)] = ((cursor_ - n + i) % capacity_ + capacity_) % capacity_;
  return gather(slots);
}

Matrix ReplayBuffer::export_rows() const {
  const Index w = row_width();
  Matrix out(size_, w);
  for (Index i = 0; i < size_; ++i) {
    for (Index j = 0; j < w; ++j) out(i, j) = storage_[static_cast<std::size_t>(i * w + j)];
  }
  return out;
}

void ReplayBuffer::import_rows(const Matrix& rows, Index cursor) {
  const Index w = row_width();
  if (rows.cols() != w && rows.rows() != 0) throw DimensionError("ReplayBuffer::import_rows: width mismatch");
  if (rows.rows() > capacity_) throw UsageError("ReplayBuffer::import_rows: more rows than capacity");
  size_ = rows.rows();
  cursor_ = cursor;
  storage_.assign(static_cast<std::size_t>(size_ * w), 0.0);
  for (Index i = 0; i < size_; ++i) {
    for (Index j = 0; j < w; ++j) storage_[static_cast<std::size_t>(i * w + j)] = rows(i, j);
  }
}

}  // namespace koopctl
