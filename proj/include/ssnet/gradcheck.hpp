#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ssnet/layers.hpp"

namespace ssnet::nn {

struct GradCheckOptions {
  double step = 1e-5;       // central-difference half step
  double tolerance = 1e-5;  // pass threshold on max relative error
  // return true to exclude an element (e.g. a kink) from comparison
  std::function<bool(size_t leaf_idx, size_t elem_idx)> skip;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t compared = 0;
  size_t skipped = 0;
  bool pass = true;
  std::string worst;
};

// Compares analytic gradients of forward() w.r.t. the given leaves against
// central finite differences. forward() must rebuild the graph from the
// leaf values on every call and return a scalar. 64-bit only: the check is
// meaningless at float precision.
GradCheckReport grad_check(const std::function<DiffTensorD()>& forward,
                           const std::vector<DiffTensorD*>& leaves,
                           const GradCheckOptions& opts = {});

struct LayerCheckResult {
  std::string layer;
  size_t seeds = 0;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Randomized per-layer gradient checks: conv1d, relu, maxpool1d,
// dropout (eval), batchnorm, lstm_cell, lstm_sequence (5 steps), dense,
// softmax cross-entropy. Backs `ssnet gradcheck` and the acceptance gate.
std::vector<LayerCheckResult> run_layer_gradchecks(size_t seeds_per_layer = 20);

}  // namespace ssnet::nn
