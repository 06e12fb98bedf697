#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ivfuse/core/tensor.hpp"

namespace ivfuse::ad {

// Reverse-mode autodiff over Tensor<S>. A forward pass builds a DAG of Node
// objects; backward() walks it once in reverse topological order. Leaves
// (parameters, inputs) persist across steps, interior nodes are discarded
// with the graph.
template <typename S>
class Node {
  public:
    Tensor<S> value;
    Tensor<S> grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_op;

    const Shape& shape() const { return value.shape(); }

    void ensure_grad() {
        if (!grad_ready) {
            grad = Tensor<S>::zeros(value.shape());
            grad_ready = true;
        }
    }
    void zero_grad() {
        if (grad_ready) grad.array().setZero();
    }
    void accumulate(const Tensor<S>& g) {
        ensure_grad();
        grad.array() += g.array();
    }
};

template <typename S>
using Var = std::shared_ptr<Node<S>>;

template <typename S>
Var<S> make_leaf(Tensor<S> value, bool requires_grad) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

template <typename S>
Var<S> make_const(Tensor<S> value) {
    return make_leaf<S>(std::move(value), false);
}

template <typename S>
Var<S> make_op(Tensor<S> value, std::vector<Var<S>> parents,
               std::function<void(Node<S>&)> backward_op) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backward_op = std::move(backward_op);
    return n;
}

// Reverse topological order from root (root last).
template <typename S>
std::vector<Node<S>*> topo_order(const Var<S>& root) {
    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> seen;
    std::vector<std::pair<Node<S>*, std::size_t>> stack;
    if (!root->requires_grad) return order;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<S>* p = node->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

// Backpropagate from a scalar root. Gradients accumulate into every node
// reachable through requires_grad parents; leaf grads are the caller's to
// zero between steps.
template <typename S>
void backward(const Var<S>& root) {
    if (root->value.size() != 1)
        throw ValidationError("backward: root must be scalar, got " + root->shape().str());
    if (!root->requires_grad) return;
    auto order = topo_order(root);
    root->ensure_grad();
    root->grad.array().setConstant(S(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<S>* n = *it;
        if (n->backward_op && n->grad_ready) n->backward_op(*n);
    }
}

}  // namespace ivfuse::ad
