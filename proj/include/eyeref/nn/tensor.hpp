#pragma once

// Minimal reverse-mode autodiff over dense tensors. Batch size is always 1;
// activations are rank-3 (channels, height, width). Parameters are leaf
// tensors with requires_grad set; their gradients accumulate across
// backward passes until zero_grad().

#include <cassert>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <unordered_set>
#include <vector>

#include "eyeref/core.hpp"

namespace eyeref::nn {

template <typename T>
struct Node {
  std::vector<int> dims;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  T* grad_data() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad.data();
  }
  bool is_leaf() const { return !backward; }
};

inline std::size_t element_count(const std::vector<int>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<int> dims, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    if (values.size() != element_count(dims)) throw Error("ShapeError", "tensor value count does not match dims");
    node_->dims = std::move(dims);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(std::vector<int> dims, bool requires_grad = false) {
    const auto n = element_count(dims);
    return Tensor(std::move(dims), std::vector<T>(n, T(0)), requires_grad);
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const std::vector<int>& dims() const { return node_->dims; }
  int dim(std::size_t i) const { return node_->dims.at(i); }
  std::size_t rank() const { return node_->dims.size(); }
  std::size_t size() const { return node_->value.size(); }
  int channels() const { return node_->dims.at(0); }
  int height() const { return node_->dims.at(1); }
  int width() const { return node_->dims.at(2); }

  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  const std::vector<T>& value_vector() const { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  T item() const {
    assert(size() == 1);
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.clear(); }

  /// Value copy with no graph history.
  Tensor detach() const { return Tensor(node_->dims, node_->value, false); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Creates an op result. The backward closure is kept only when some
/// parent needs a gradient, so inference builds no graph.
template <typename T>
Tensor<T> make_result(std::vector<int> dims, std::vector<T> values, std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward) {
  Tensor<T> out(std::move(dims), std::move(values));
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    auto& node = *out.node();
    node.requires_grad = true;
    for (const auto& p : parents) node.parents.push_back(p.node());
    node.backward = std::move(backward);
  }
  return out;
}

/// Accumulates d(root)/d(leaf) into every reachable leaf with requires_grad.
/// `root` must hold a single element unless `seed` is supplied.
template <typename T>
void backward(const Tensor<T>& root, std::span<const T> seed = {}) {
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node<T>* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order)
    if (!n->is_leaf()) n->grad.clear();
  Node<T>& r = *root.node();
  T* g = r.grad_data();
  if (seed.empty()) {
    if (r.value.size() != 1) throw Error("ShapeError", "backward from a non-scalar needs a seed gradient");
    g[0] += T(1);
  } else {
    if (seed.size() != r.value.size()) throw Error("ShapeError", "seed gradient size mismatch");
    for (std::size_t k = 0; k < seed.size(); ++k) g[k] += seed[k];
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->is_leaf() && !n->grad.empty()) n->backward(*n);
  }
}

}  // namespace eyeref::nn
