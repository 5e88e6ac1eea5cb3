#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "coin/tensor.hpp"

namespace coin::nn {

namespace detail {
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

/// Disables graph recording for the enclosing scope.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Tensor<T>&)> backward_fn;

    Tensor<T>& grad_buffer() {
        if (grad.empty()) grad = Tensor<T>(value.shape());
        return grad;
    }

    void accumulate(const Tensor<T>& g) {
        if (grad.empty()) {
            grad = g;
        } else {
            grad += g;
        }
    }

    void zero_grad() { grad = Tensor<T>(); }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

/// Leaf that never receives gradients.
template <typename T>
Var<T> constant(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    return node;
}

/// Leaf that accumulates gradients (weights, or inputs under a gradient probe).
template <typename T>
Var<T> leaf(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = true;
    return node;
}

/// Creates an interior node. `backward` receives the upstream gradient and must
/// accumulate into any parent whose requires_grad is set.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents,
                   std::function<void(const Tensor<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& p : parents) needs = needs || p->requires_grad;
    }
    if (needs) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward);
    }
    return node;
}

/// Cuts the graph: same value, no history.
template <typename T>
Var<T> detach(const Var<T>& v) {
    return constant(v->value);
}

/// Reverse-mode sweep from `root`, seeded with `seed` (ones for a scalar root).
template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed) {
    if (!root->requires_grad) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    // iterative post-order DFS
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->accumulate(seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(node->grad);
    }
}

template <typename T>
void backward(const Var<T>& root) {
    backward(root, Tensor<T>(root->value.shape(), T(1)));
}

}  // namespace coin::nn
