#include "ssnet/autodiff.hpp"

#include <sstream>
#include <unordered_set>

namespace ssnet::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

template <typename T>
BackwardStats backward(const DiffTensor<T>& loss) {
  using Impl = typename DiffTensor<T>::Impl;
  if (loss.size() != 1) throw NonScalarRoot("backward root must be a scalar");

  // iterative post-order DFS over parents
  std::vector<Impl*> order;
  std::unordered_set<Impl*> visited;
  struct Frame {
    Impl* node;
    size_t next_parent;
  };
  std::vector<Frame> stack{{loss.impl().get(), 0}};
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Impl* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  loss.impl()->accumulate(Tensor<T>::full({1}, T{1}));

  BackwardStats stats;
  stats.nodes_visited = order.size();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* node = *it;
    if (!node->backward_fn) continue;
    if (node->grad.empty()) node->grad = Tensor<T>(node->value.shape());
    node->backward_fn(*node);
    ++stats.backward_calls;
  }
  return stats;
}

template BackwardStats backward<float>(const DiffTensor<float>&);
template BackwardStats backward<double>(const DiffTensor<double>&);

}  // namespace ssnet::nn
