#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "ssnet/tensor.hpp"

namespace ssnet::nn {

// Reverse-mode autodiff over dense tensors. Graph nodes are recorded at
// layer/op granularity; backward runs each node exactly once in reverse
// topological order and accumulates gradients additively at fan-out.

bool grad_enabled();

// Disables graph recording in scope (eval-mode forwards, value-only math).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
class DiffTensor {
 public:
  struct Impl {
    Tensor<T> value;
    Tensor<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Impl>> parents;
    std::function<void(Impl&)> backward_fn;  // null for leaves
    const char* op = "leaf";

    void accumulate(const Tensor<T>& g) {
      if (grad.empty()) {
        grad = g;
        return;
      }
      for (size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    }
    void accumulate(Tensor<T>&& g) {
      if (grad.empty()) {
        grad = std::move(g);
        return;
      }
      for (size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    }
  };

  DiffTensor() : impl_(std::make_shared<Impl>()) {}
  explicit DiffTensor(Tensor<T> value, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    impl_->value = std::move(value);
    impl_->requires_grad = requires_grad;
  }
  static DiffTensor param(Tensor<T> value) { return DiffTensor(std::move(value), true); }

  const Tensor<T>& value() const { return impl_->value; }
  Tensor<T>& value() { return impl_->value; }
  const Tensor<T>& grad() const { return impl_->grad; }
  Tensor<T>& grad_ref() {
    if (impl_->grad.empty()) impl_->grad = Tensor<T>(impl_->value.shape());
    return impl_->grad;
  }
  bool has_grad() const { return !impl_->grad.empty(); }
  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }
  void zero_grad() {
    if (!impl_->grad.empty()) impl_->grad.fill(T{0});
  }

  const Shape& shape() const { return impl_->value.shape(); }
  size_t size() const { return impl_->value.size(); }

  std::shared_ptr<Impl> impl() const { return impl_; }

  // Wires up a recorded op node. Used by the layer implementations.
  void attach_node(std::vector<std::shared_ptr<Impl>> parents,
                   std::function<void(Impl&)> backward_fn, const char* op) {
    impl_->parents = std::move(parents);
    impl_->backward_fn = std::move(backward_fn);
    impl_->requires_grad = true;
    impl_->op = op;
  }

 private:
  std::shared_ptr<Impl> impl_;
};

struct BackwardStats {
  size_t nodes_visited = 0;   // graph nodes reached (incl. leaves)
  size_t backward_calls = 0;  // op backward functions executed
};

// Seeds d(loss)/d(loss)=1 and propagates through the recorded graph.
// Throws NonScalarRoot unless `loss` has exactly one element.
template <typename T>
BackwardStats backward(const DiffTensor<T>& loss);

using DiffTensorF = DiffTensor<float>;
using DiffTensorD = DiffTensor<double>;

}  // namespace ssnet::nn
