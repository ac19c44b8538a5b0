#pragma once

// Reverse-mode automatic differentiation over Tensor<T>.
//
// Every backward rule is written in terms of differentiable ops, so running
// grad() with create_graph=true records the backward pass itself and the
// resulting gradients can be differentiated again. The gradient-penalty
// losses rely on this: their penalty term is a function of dD/dx and its
// parameter gradients need the second-order path.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ganforge/tensor.hpp"

namespace ganforge {

template <class T>
class Var;

template <class T>
struct Node : std::enable_shared_from_this<Node<T>> {
  using Backward = std::function<std::vector<Var<T>>(const Var<T>& self, const Var<T>& grad,
                                                     const std::vector<bool>& needs)>;
  Tensor<T> value;
  std::vector<Var<T>> inputs;
  Backward backward;
  bool requires_grad = false;
  const char* op = "leaf";
};

/// Shared handle to a node of the computation graph. Copies alias the same
/// node; leaves created with requires_grad=true are the trainable tensors.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  /// In-place access for optimizers; only valid on leaves between steps.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return !node_->backward; }
  const char* op() const { return node_->op; }
  Node<T>* node() const noexcept { return node_.get(); }

  Var detach() const { return Var(node_->value, false); }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {
inline thread_local bool grad_recording = true;
}

inline bool grad_enabled() { return detail::grad_recording; }

/// RAII switch for graph recording (off inside inference and optimizer code).
class GradMode {
 public:
  explicit GradMode(bool enabled) : previous_(detail::grad_recording) {
    detail::grad_recording = enabled;
  }
  ~GradMode() { detail::grad_recording = previous_; }
  GradMode(const GradMode&) = delete;
  GradMode& operator=(const GradMode&) = delete;

 private:
  bool previous_;
};

struct NoGrad : GradMode {
  NoGrad() : GradMode(false) {}
};

template <class T>
Var<T> make_op(const char* op, Tensor<T> value, std::vector<Var<T>> inputs,
               typename Node<T>::Backward backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

struct GradOptions {
  /// Record the backward pass so the returned gradients are differentiable.
  bool create_graph = false;
  /// Return zero tensors for targets the output does not depend on instead
  /// of failing.
  bool allow_unused = false;
};

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);

/// Gradients of a scalar `output` with respect to each of `wrt`.
template <class T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& wrt,
                         GradOptions options = {}) {
  if (output.value().size() != 1) {
    throw Error("grad() needs a scalar output, got shape " + to_string(output.shape()));
  }
  std::unordered_set<const Node<T>*> targets;
  for (const auto& w : wrt) targets.insert(w.node());

  // Iterative post-order DFS; `reaches` marks nodes with a path to a target
  // so backward rules skip gradients nobody asked for.
  std::vector<Node<T>*> order;
  std::unordered_map<const Node<T>*, bool> reaches;
  if (output.requires_grad()) {
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{output.node(), 0}};
    std::unordered_set<const Node<T>*> visited{output.node()};
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node<T>* child = node->inputs[next++].node();
        if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        continue;
      }
      bool r = targets.count(node) > 0;
      for (const auto& in : node->inputs) {
        auto it = reaches.find(in.node());
        r = r || (it != reaches.end() && it->second);
      }
      reaches[node] = r;
      order.push_back(node);
      stack.pop_back();
    }
  }

  GradMode mode(options.create_graph);
  std::unordered_map<const Node<T>*, Var<T>> grads;
  if (output.requires_grad()) {
    grads[output.node()] = Var<T>(Tensor<T>(output.shape(), T{1}));
  }
  std::unordered_map<const Node<T>*, Var<T>> result;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!reaches[node]) continue;
    auto g = grads.find(node);
    if (g == grads.end()) continue;
    Var<T> gout = g->second;
    grads.erase(g);
    if (targets.count(node)) result[node] = gout;
    if (!node->backward) continue;
    std::vector<bool> needs(node->inputs.size());
    bool any = false;
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const auto& in = node->inputs[i];
      needs[i] = in.requires_grad() && reaches[in.node()];
      any = any || needs[i];
    }
    if (!any) continue;
    Var<T> self(node->shared_from_this());
    auto input_grads = node->backward(self, gout, needs);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      if (!needs[i] || !input_grads[i].defined()) continue;
      const Node<T>* key = node->inputs[i].node();
      auto existing = grads.find(key);
      if (existing == grads.end()) {
        grads.emplace(key, input_grads[i]);
      } else {
        existing->second = add(existing->second, input_grads[i]);
      }
    }
  }

  std::vector<Var<T>> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = result.find(w.node());
    if (it != result.end()) {
      out.push_back(it->second);
    } else if (options.allow_unused) {
      out.push_back(Var<T>(Tensor<T>(w.shape())));
    } else {
      throw Error("gradient requested for a tensor of shape " + to_string(w.shape()) +
                  " that is not part of the computation");
    }
  }
  return out;
}

}  // namespace ganforge
