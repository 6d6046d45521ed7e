#include "lfcx/autograd.hpp"

#include <unordered_set>

#include "lfcx/errors.hpp"

namespace lfcx {

namespace {
thread_local bool g_record = true;
thread_local MacCounterScope* g_counter = nullptr;
}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var make_node(Tensor value, const char* op, std::vector<Var> parents,
              std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_record)
    for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(fn);
  }
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (!root.defined()) throw ContractError("backward on undefined value");
  if (root.value().numel() != 1)
    throw ContractError("backward root must be scalar, got shape " + shape_str(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

bool grad_recording_enabled() { return g_record; }

NoGradGuard::NoGradGuard() : prev_(g_record) { g_record = false; }
NoGradGuard::~NoGradGuard() { g_record = prev_; }

MacCounterScope::MacCounterScope() : prev_(g_counter) { g_counter = this; }
MacCounterScope::~MacCounterScope() { g_counter = prev_; }

void MacCounterScope::add(std::size_t macs) {
  if (g_counter) g_counter->total_ += macs;
}

}  // namespace lfcx
