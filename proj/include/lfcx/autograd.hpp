#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lfcx/tensor.hpp"

namespace lfcx {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One value in a define-by-run graph. Parents are kept only when the node
// requires a gradient, so inference graphs hold no history.
struct Node {
  Tensor value;
  Tensor grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;

  // Zero-initialised on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor(); }
  const char* op() const { return node_->op; }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Creates a graph node. When no parent requires a gradient (or recording is
// disabled) the result is a plain constant and `fn` is dropped.
Var make_node(Tensor value, const char* op, std::vector<Var> parents,
              std::function<void(Node&)> fn);

// Reverse topological sweep from a scalar root; gradients sum into every
// reachable node that requires one.
void backward(const Var& root);

bool grad_recording_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Multiply-accumulate tally for conv/matmul operators executed while a scope
// is alive on the current thread.
class MacCounterScope {
 public:
  MacCounterScope();
  ~MacCounterScope();
  MacCounterScope(const MacCounterScope&) = delete;
  MacCounterScope& operator=(const MacCounterScope&) = delete;
  std::size_t total() const { return total_; }

  static void add(std::size_t macs);

 private:
  std::size_t total_ = 0;
  MacCounterScope* prev_;
};

}  // namespace lfcx
