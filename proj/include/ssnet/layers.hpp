#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ssnet/autodiff.hpp"
#include "ssnet/rng.hpp"

namespace ssnet::nn {

enum class Mode { kTrain, kEval };

// ---- elementwise / structural primitives -------------------------------

template <typename T>
DiffTensor<T> add(const DiffTensor<T>& a, const DiffTensor<T>& b);
template <typename T>
DiffTensor<T> mul(const DiffTensor<T>& a, const DiffTensor<T>& b);
template <typename T>
DiffTensor<T> sum(const DiffTensor<T>& x);  // -> scalar
template <typename T>
DiffTensor<T> sigmoid(const DiffTensor<T>& x);
template <typename T>
DiffTensor<T> tanh_op(const DiffTensor<T>& x);
template <typename T>
DiffTensor<T> relu(const DiffTensor<T>& x);
// concatenate two [batch x f1], [batch x f2] tensors along axis 1
template <typename T>
DiffTensor<T> concat_cols(const DiffTensor<T>& a, const DiffTensor<T>& b);
template <typename T>
DiffTensor<T> reshape(const DiffTensor<T>& x, Shape shape);

// ---- layer parameters ---------------------------------------------------

template <typename T>
struct ConvParams {
  DiffTensor<T> weights;  // [out_maps x in_channels x kernel]
  DiffTensor<T> bias;     // [out_maps]
  size_t out_maps() const { return weights.shape()[0]; }
  size_t in_channels() const { return weights.shape()[1]; }
  size_t kernel() const { return weights.shape()[2]; }
};

template <typename T>
struct BatchNormParams {
  DiffTensor<T> gamma;  // [features]
  DiffTensor<T> beta;   // [features]
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T{0.1};
  T eps = T{1e-5};
  static BatchNormParams identity(size_t features) {
    BatchNormParams p;
    p.gamma = DiffTensor<T>::param(Tensor<T>::full({features}, T{1}));
    p.beta = DiffTensor<T>::param(Tensor<T>({features}));
    p.running_mean = Tensor<T>({features});
    p.running_var = Tensor<T>::full({features}, T{1});
    return p;
  }
};

// Gate weights act on the concatenated [h_prev, x_t] vector, so every
// gate matrix has shape [hidden x (hidden + input)].
template <typename T>
struct LSTMParams {
  DiffTensor<T> w_forget, w_input, w_candidate, w_output;
  DiffTensor<T> b_forget, b_input, b_candidate, b_output;
  size_t hidden = 0;
  size_t input = 0;
  static LSTMParams zeros(size_t hidden, size_t input);
};

// ---- ops ----------------------------------------------------------------

// 1-D cross-correlation, zero "same" padding (left floor((k-1)/2),
// right ceil((k-1)/2)), stride 1. x: [batch x in_ch x len].
template <typename T>
DiffTensor<T> conv1d(const DiffTensor<T>& x, const ConvParams<T>& p);

// Non-overlapping window max; trailing remainder dropped. Gradient routes
// to the first argmax per window.
template <typename T>
DiffTensor<T> maxpool1d(const DiffTensor<T>& x, size_t window = 3, size_t stride = 3);

// Inverted dropout: train mode zeroes with probability `rate` and scales
// survivors by 1/(1-rate); eval mode is the identity.
template <typename T>
DiffTensor<T> dropout(const DiffTensor<T>& x, double rate, Mode mode, uint64_t seed);

// x: [batch x features]. Train mode normalizes with batch statistics
// (population variance) and updates running stats; eval uses running stats.
template <typename T>
DiffTensor<T> batchnorm(const DiffTensor<T>& x, BatchNormParams<T>& p, Mode mode);

// Single LSTM step per Eqs. f/i/candidate/output gates on [h_prev, x_t].
// Composite of primitive ops; returns (h_t, c_t).
template <typename T>
std::pair<DiffTensor<T>, DiffTensor<T>> lstm_cell(const DiffTensor<T>& x_t,
                                                  const DiffTensor<T>& h_prev,
                                                  const DiffTensor<T>& c_prev,
                                                  const LSTMParams<T>& p);

// Unrolled LSTM over x: [batch x time x input] with zero initial state;
// returns the final hidden state [batch x hidden]. Recurrent dropout is
// variational: one mask per sequence applied to the h_prev input in train
// mode. Fused node with hand-written BPTT.
template <typename T>
DiffTensor<T> lstm_sequence(const DiffTensor<T>& x, const LSTMParams<T>& p,
                            double recurrent_dropout_rate, Mode mode, uint64_t seed);

// y = x * W + b with W: [in x out]
template <typename T>
DiffTensor<T> dense(const DiffTensor<T>& x, const DiffTensor<T>& w, const DiffTensor<T>& b);

// Mean cross-entropy over the batch with a max-subtracted softmax.
// d(loss)/d(logits) = (softmax - one_hot) / batch.
template <typename T>
DiffTensor<T> softmax_cross_entropy(const DiffTensor<T>& logits, const std::vector<int>& labels);

// Row-wise stabilized softmax (value only, no graph).
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

namespace testhook {
// Scales the relu backward pass; the gradcheck self-test perturbs it to
// prove the harness catches a broken backward.
extern double relu_grad_scale;
}  // namespace testhook

}  // namespace ssnet::nn
