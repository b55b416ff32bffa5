#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "koopctl/errors.hpp"

namespace koopctl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // empty until something is accumulated
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents.
  std::function<void(const Node&)> backward;
};

std::uint64_t next_node_id();
void accumulate(Node& node, const Matrix& contribution);

}  // namespace detail

/// Dense 2-D double tensor participating in a reverse-mode gradient tape.
///
/// A Tensor is a cheap handle; copies alias the same node. Vectors are
/// represented as n x 1 columns. Values are immutable once an op has
/// consumed them, except through the explicit leaf update hooks used by
/// optimizers.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Matrix value, bool requires_grad = false);

  static Tensor zeros(Index rows, Index cols, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor column(const std::vector<double>& v, bool requires_grad = false);

  const Matrix& value() const { return node_->value; }
  double item() const;

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  std::array<Index, 2> shape() const { return {rows(), cols()}; }
  std::string shape_str() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  bool has_grad() const { return node_->grad.size() != 0; }
  /// Gradient buffer; zeros of the value's shape if nothing has been accumulated.
  Matrix grad() const;
  void zero_grad();

  /// Leaf-only in-place update (optimizer steps, EMA copies, checkpoint loads).
  Matrix& leaf_value();

  /// New constant leaf with a copy of the value.
  Tensor detach() const;

  std::uint64_t id() const { return node_->id; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  /// Records an op result. Gradient tracking is enabled iff any parent requires grad.
  static Tensor make_result(Matrix value, std::vector<Tensor> parents,
                            std::function<void(const detail::Node&)> backward);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// While alive, ops on this thread produce constants even from grad-requiring inputs.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool active();

 private:
  bool previous_;
};

/// Ordered view of the subgraph reachable from a root, parents before children.
class Tape {
 public:
  explicit Tape(const Tensor& root);

  const std::vector<detail::Node*>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  /// Runs the reverse sweep, seeding the root with `seed`.
  void run(const Matrix& seed);

 private:
  std::vector<detail::Node*> nodes_;
  std::vector<std::shared_ptr<detail::Node>> keep_alive_;
};

/// Reverse-mode sweep from a scalar. Leaf grads accumulate across calls.
void backward(const Tensor& scalar);

}  // namespace koopctl
