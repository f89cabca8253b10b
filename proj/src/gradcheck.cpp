#include "ssnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ssnet/rng.hpp"

namespace ssnet::nn {

namespace {

double rel_err(double analytic, double numeric) {
  const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
  return std::fabs(analytic - numeric) / denom;
}

}  // namespace

GradCheckReport grad_check(const std::function<DiffTensorD()>& forward,
                           const std::vector<DiffTensorD*>& leaves,
                           const GradCheckOptions& opts) {
  GradCheckReport report;
  for (auto* leaf : leaves) {
    leaf->set_requires_grad(true);
    leaf->zero_grad();
  }
  DiffTensorD loss = forward();
  backward(loss);

  std::vector<TensorD> analytic;
  analytic.reserve(leaves.size());
  for (auto* leaf : leaves)
    analytic.push_back(leaf->has_grad() ? leaf->grad() : TensorD(leaf->shape()));

  NoGradGuard guard;
  const double h = opts.step;
  for (size_t li = 0; li < leaves.size(); ++li) {
    TensorD& v = leaves[li]->value();
    for (size_t e = 0; e < v.size(); ++e) {
      if (opts.skip && opts.skip(li, e)) {
        ++report.skipped;
        continue;
      }
      const double orig = v[e];
      v[e] = orig + h;
      const double lp = forward().value()[0];
      v[e] = orig - h;
      const double lm = forward().value()[0];
      v[e] = orig;
      const double numeric = (lp - lm) / (2.0 * h);
      const double err = rel_err(analytic[li][e], numeric);
      ++report.compared;
      if (err > report.max_rel_err) {
        report.max_rel_err = err;
        std::ostringstream os;
        os << "leaf " << li << " elem " << e << " analytic " << analytic[li][e] << " numeric "
           << numeric;
        report.worst = os.str();
      }
    }
  }
  report.pass = report.max_rel_err < opts.tolerance;
  return report;
}

namespace {

TensorD random_tensor(Shape shape, CounterRng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t[i] = rng.next_uniform(lo, hi);
  return t;
}

// distinct well-separated values so pooling windows have no near-ties
TensorD separated_tensor(Shape shape, CounterRng& rng) {
  TensorD t(std::move(shape));
  std::vector<size_t> perm(t.size());
  std::iota(perm.begin(), perm.end(), size_t{0});
  rng.shuffle(perm);
  for (size_t i = 0; i < t.size(); ++i)
    t[i] = (static_cast<double>(perm[i]) - static_cast<double>(t.size()) / 2.0) * 0.05;
  return t;
}

// weighted sum against a fixed random tensor turns any output into a scalar
DiffTensorD weighted_sum(const DiffTensorD& y, const TensorD& weights) {
  return sum(mul(y, DiffTensorD(weights)));
}

struct LayerCase {
  std::function<GradCheckReport(uint64_t seed)> run;
  double tolerance = 1e-5;
};

GradCheckReport check_conv1d(uint64_t seed) {
  CounterRng rng(seed, {1});
  const size_t batch = 1 + rng.next_below(3);
  const size_t in_ch = 1 + rng.next_below(3);
  const size_t len = 3 + rng.next_below(10);
  const size_t out_maps = 1 + rng.next_below(4);
  const size_t k = 1 + rng.next_below(std::min<size_t>(8, len));
  ConvParams<double> p;
  p.weights = DiffTensorD::param(random_tensor({out_maps, in_ch, k}, rng));
  p.bias = DiffTensorD::param(random_tensor({out_maps}, rng));
  DiffTensorD x(random_tensor({batch, in_ch, len}, rng), true);
  const TensorD r = random_tensor({batch, out_maps, len}, rng);
  return grad_check([&] { return weighted_sum(conv1d(x, p), r); }, {&x, &p.weights, &p.bias});
}

GradCheckReport check_relu(uint64_t seed) {
  CounterRng rng(seed, {2});
  const size_t n = 4 + rng.next_below(20);
  TensorD xv({n});
  for (size_t i = 0; i < n; ++i) {
    const double mag = rng.next_uniform(0.1, 1.0);  // keep away from the kink at 0
    xv[i] = rng.next_double() < 0.5 ? -mag : mag;
  }
  DiffTensorD x(std::move(xv), true);
  const TensorD r = random_tensor({n}, rng);
  return grad_check([&] { return weighted_sum(relu(x), r); }, {&x});
}

GradCheckReport check_maxpool1d(uint64_t seed) {
  CounterRng rng(seed, {3});
  const size_t batch = 1 + rng.next_below(2);
  const size_t ch = 1 + rng.next_below(3);
  const size_t len = 3 + rng.next_below(18);
  DiffTensorD x(separated_tensor({batch, ch, len}, rng), true);
  const size_t out_len = len / 3;
  const TensorD r = random_tensor({batch, ch, out_len}, rng);
  return grad_check([&] { return weighted_sum(maxpool1d(x), r); }, {&x});
}

GradCheckReport check_dropout_eval(uint64_t seed) {
  CounterRng rng(seed, {4});
  const size_t n = 8 + rng.next_below(24);
  DiffTensorD x(random_tensor({n}, rng), true);
  const TensorD r = random_tensor({n}, rng);
  return grad_check([&] { return weighted_sum(dropout(x, 0.02, Mode::kEval, seed), r); }, {&x});
}

GradCheckReport check_batchnorm(uint64_t seed) {
  CounterRng rng(seed, {5});
  const size_t batch = 2 + rng.next_below(4);
  const size_t feats = 1 + rng.next_below(6);
  auto p = BatchNormParams<double>::identity(feats);
  p.gamma = DiffTensorD::param(random_tensor({feats}, rng, 0.5, 1.5));
  p.beta = DiffTensorD::param(random_tensor({feats}, rng));
  DiffTensorD x(random_tensor({batch, feats}, rng), true);
  const TensorD r = random_tensor({batch, feats}, rng);
  return grad_check([&] { return weighted_sum(batchnorm(x, p, Mode::kTrain), r); },
                    {&x, &p.gamma, &p.beta});
}

GradCheckReport check_lstm_cell(uint64_t seed) {
  CounterRng rng(seed, {6});
  const size_t batch = 1 + rng.next_below(3);
  const size_t hidden = 1 + rng.next_below(4);
  const size_t input = 1 + rng.next_below(3);
  auto p = LSTMParams<double>::zeros(hidden, input);
  for (auto* w : {&p.w_forget, &p.w_input, &p.w_candidate, &p.w_output})
    *w = DiffTensorD::param(random_tensor({hidden, hidden + input}, rng));
  for (auto* b : {&p.b_forget, &p.b_input, &p.b_candidate, &p.b_output})
    *b = DiffTensorD::param(random_tensor({hidden}, rng));
  DiffTensorD x(random_tensor({batch, input}, rng), true);
  DiffTensorD h0(random_tensor({batch, hidden}, rng), true);
  DiffTensorD c0(random_tensor({batch, hidden}, rng), true);
  const TensorD rh = random_tensor({batch, hidden}, rng);
  const TensorD rc = random_tensor({batch, hidden}, rng);
  return grad_check(
      [&] {
        auto [h, c] = lstm_cell(x, h0, c0, p);
        return add(weighted_sum(h, rh), weighted_sum(c, rc));
      },
      {&x, &h0, &c0, &p.w_forget, &p.w_input, &p.w_candidate, &p.w_output, &p.b_forget,
       &p.b_input, &p.b_candidate, &p.b_output});
}

GradCheckReport check_lstm_sequence(uint64_t seed) {
  CounterRng rng(seed, {7});
  const size_t batch = 1 + rng.next_below(2);
  const size_t hidden = 2 + rng.next_below(2);
  const size_t input = 1 + rng.next_below(3);
  const size_t time = 5;
  auto p = LSTMParams<double>::zeros(hidden, input);
  for (auto* w : {&p.w_forget, &p.w_input, &p.w_candidate, &p.w_output})
    *w = DiffTensorD::param(random_tensor({hidden, hidden + input}, rng));
  for (auto* b : {&p.b_forget, &p.b_input, &p.b_candidate, &p.b_output})
    *b = DiffTensorD::param(random_tensor({hidden}, rng));
  DiffTensorD x(random_tensor({batch, time, input}, rng), true);
  const TensorD r = random_tensor({batch, hidden}, rng);
  // half the seeds exercise the variational recurrent-dropout path
  const bool with_dropout = seed % 2 == 1;
  const Mode mode = with_dropout ? Mode::kTrain : Mode::kEval;
  const double rate = with_dropout ? 0.02 : 0.0;
  GradCheckOptions opts;
  opts.tolerance = 1e-4;
  return grad_check(
      [&] { return weighted_sum(lstm_sequence(x, p, rate, mode, seed), r); },
      {&x, &p.w_forget, &p.w_input, &p.w_candidate, &p.w_output, &p.b_forget, &p.b_input,
       &p.b_candidate, &p.b_output},
      opts);
}

GradCheckReport check_dense(uint64_t seed) {
  CounterRng rng(seed, {8});
  const size_t batch = 1 + rng.next_below(4);
  const size_t in = 1 + rng.next_below(6);
  const size_t out = 1 + rng.next_below(5);
  DiffTensorD w = DiffTensorD::param(random_tensor({in, out}, rng));
  DiffTensorD b = DiffTensorD::param(random_tensor({out}, rng));
  DiffTensorD x(random_tensor({batch, in}, rng), true);
  const TensorD r = random_tensor({batch, out}, rng);
  return grad_check([&] { return weighted_sum(dense(x, w, b), r); }, {&x, &w, &b});
}

GradCheckReport check_softmax_ce(uint64_t seed) {
  CounterRng rng(seed, {9});
  const size_t batch = 1 + rng.next_below(5);
  const size_t classes = 2 + rng.next_below(4);
  DiffTensorD logits(random_tensor({batch, classes}, rng, -2.0, 2.0), true);
  std::vector<int> labels(batch);
  for (auto& l : labels) l = static_cast<int>(rng.next_below(classes));
  return grad_check([&] { return softmax_cross_entropy(logits, labels); }, {&logits});
}

}  // namespace

std::vector<LayerCheckResult> run_layer_gradchecks(size_t seeds_per_layer) {
  struct Entry {
    const char* name;
    GradCheckReport (*fn)(uint64_t);
    double tol;
  };
  const Entry entries[] = {
      {"conv1d", check_conv1d, 1e-5},
      {"relu", check_relu, 1e-5},
      {"maxpool1d", check_maxpool1d, 1e-5},
      {"dropout_eval", check_dropout_eval, 1e-5},
      {"batchnorm", check_batchnorm, 1e-5},
      {"lstm_cell", check_lstm_cell, 1e-5},
      {"lstm_sequence_5step", check_lstm_sequence, 1e-4},
      {"dense", check_dense, 1e-5},
      {"softmax_cross_entropy", check_softmax_ce, 1e-5},
  };
  std::vector<LayerCheckResult> results;
  for (const auto& e : entries) {
    LayerCheckResult r;
    r.layer = e.name;
    r.seeds = seeds_per_layer;
    r.tolerance = e.tol;
    r.pass = true;
    for (uint64_t s = 0; s < seeds_per_layer; ++s) {
      GradCheckReport rep = e.fn(s);
      r.max_rel_err = std::max(r.max_rel_err, rep.max_rel_err);
    }
    r.pass = r.max_rel_err < e.tol;
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace ssnet::nn
