#include "koopctl/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace koopctl {

namespace detail {

std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

void accumulate(Node& node, const Matrix& contribution) {
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = contribution;
  } else {
    node.grad += contribution;
  }
}

}  // namespace detail

namespace {
thread_local bool g_no_grad = false;
}

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::active() { return g_no_grad; }

Tensor::Tensor() : Tensor(Matrix(0, 0)) {}

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->id = detail::next_node_id();
}

Tensor Tensor::zeros(Index rows, Index cols, bool requires_grad) {
  return Tensor(Matrix::Zero(rows, cols), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Matrix::Constant(1, 1, v), requires_grad);
}

Tensor Tensor::column(const std::vector<double>& v, bool requires_grad) {
  Matrix m(static_cast<Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Index>(i), 0) = v[i];
  return Tensor(std::move(m), requires_grad);
}

double Tensor::item() const {
  if (value().size() != 1) {
    throw UsageError("item() on non-scalar tensor of shape " + shape_str());
  }
  return value()(0, 0);
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[" << rows() << "x" << cols() << "]";
  return os.str();
}

Matrix Tensor::grad() const {
  if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.resize(0, 0); }

Matrix& Tensor::leaf_value() {
  if (!node_->is_leaf) throw UsageError("leaf_value() on a recorded op result");
  return node_->value;
}

Tensor Tensor::detach() const { return Tensor(node_->value, false); }

Tensor Tensor::make_result(Matrix value, std::vector<Tensor> parents,
                           std::function<void(const detail::Node&)> backward) {
  Tensor out(std::move(value), false);
  bool tracked = !g_no_grad && std::any_of(parents.begin(), parents.end(),
                             [](const Tensor& p) { return p.requires_grad(); });
  if (tracked) {
    out.node_->requires_grad = true;
    out.node_->is_leaf = false;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward = std::move(backward);
  }
  return out;
}

Tape::Tape(const Tensor& root) {
  if (!root.requires_grad()) return;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{root.node().get()};
  keep_alive_.push_back(root.node());
  seen.insert(root.node().get());
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    nodes_.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  // Ids are assigned at creation, so ascending id is a topological order.
  std::sort(nodes_.begin(), nodes_.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->id < b->id; });
}

void Tape::run(const Matrix& seed) {
  if (nodes_.empty()) return;
  for (auto* n : nodes_) {
    if (!n->is_leaf) n->grad.resize(0, 0);
  }
  detail::Node* root = nodes_.back();
  detail::accumulate(*root, seed);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf || n->grad.size() == 0) continue;
    n->backward(*n);
  }
  for (auto* n : nodes_) {
    if (!n->is_leaf) n->grad.resize(0, 0);
  }
}

void backward(const Tensor& scalar) {
  if (scalar.value().size() != 1) {
    throw UsageError("backward() needs a scalar, got shape " + scalar.shape_str());
  }
  if (!scalar.requires_grad()) {
    throw UsageError("backward() on a tensor that is not connected to any gradient leaf");
  }
  Tape tape(scalar);
  tape.run(Matrix::Ones(1, 1));
}

}  // namespace koopctl
