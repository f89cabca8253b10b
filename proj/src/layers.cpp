#include "ssnet/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace ssnet::nn {

namespace testhook {
double relu_grad_scale = 1.0;
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
#ifndef NDEBUG
  if (!t.all_finite()) throw NonFiniteInput(std::string("non-finite values after ") + op);
#else
  (void)t;
  (void)op;
#endif
}

template <typename T>
bool recording(std::initializer_list<const DiffTensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (const auto* in : inputs)
    if (in->requires_grad()) return true;
  return false;
}

template <typename T>
void require_same_shape(const DiffTensor<T>& a, const DiffTensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeMismatch(std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
}

}  // namespace

// ---- elementwise / structural -------------------------------------------

template <typename T>
DiffTensor<T> add(const DiffTensor<T>& a, const DiffTensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  DiffTensor<T> y(std::move(out));
  if (recording<T>({&a, &b})) {
    auto ai = a.impl(), bi = b.impl();
    y.attach_node({ai, bi},
                  [ai, bi](typename DiffTensor<T>::Impl& node) {
                    if (ai->requires_grad) ai->accumulate(node.grad);
                    if (bi->requires_grad) bi->accumulate(node.grad);
                  },
                  "add");
  }
  return y;
}

template <typename T>
DiffTensor<T> mul(const DiffTensor<T>& a, const DiffTensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  DiffTensor<T> y(std::move(out));
  if (recording<T>({&a, &b})) {
    auto ai = a.impl(), bi = b.impl();
    y.attach_node({ai, bi},
                  [ai, bi](typename DiffTensor<T>::Impl& node) {
                    if (ai->requires_grad) {
                      Tensor<T> g(node.grad.shape());
                      for (size_t i = 0; i < g.size(); ++i) g[i] = node.grad[i] * bi->value[i];
                      ai->accumulate(std::move(g));
                    }
                    if (bi->requires_grad) {
                      Tensor<T> g(node.grad.shape());
                      for (size_t i = 0; i < g.size(); ++i) g[i] = node.grad[i] * ai->value[i];
                      bi->accumulate(std::move(g));
                    }
                  },
                  "mul");
  }
  return y;
}

template <typename T>
DiffTensor<T> sum(const DiffTensor<T>& x) {
  T acc{0};
  for (size_t i = 0; i < x.size(); ++i) acc += x.value()[i];
  DiffTensor<T> y(Tensor<T>::scalar(acc));
  if (recording<T>({&x})) {
    auto xi = x.impl();
    y.attach_node({xi},
                  [xi](typename DiffTensor<T>::Impl& node) {
                    if (!xi->requires_grad) return;
                    xi->accumulate(Tensor<T>::full(xi->value.shape(), node.grad[0]));
                  },
                  "sum");
  }
  return y;
}

template <typename T>
DiffTensor<T> sigmoid(const DiffTensor<T>& x) {
  Tensor<T> out(x.shape());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = T{1} / (T{1} + std::exp(-x.value()[i]));
  check_finite(out, "sigmoid");
  DiffTensor<T> y(std::move(out));
  if (recording<T>({&x})) {
    auto xi = x.impl();
    y.attach_node({xi},
                  [xi](typename DiffTensor<T>::Impl& node) {
                    if (!xi->requires_grad) return;
                    Tensor<T> g(node.grad.shape());
                    for (size_t i = 0; i < g.size(); ++i) {
                      T s = node.value[i];
                      g[i] = node.grad[i] * s * (T{1} - s);
                    }
                    xi->accumulate(std::move(g));
                  },
                  "sigmoid");
  }
  return y;
}

template <typename T>
DiffTensor<T> tanh_op(const DiffTensor<T>& x) {
  Tensor<T> out(x.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.value()[i]);
  DiffTensor<T> y(std::move(out));
  if (recording<T>({&x})) {
    auto xi = x.impl();
    y.attach_node({xi},
                  [xi](typename DiffTensor<T>::Impl& node) {
                    if (!xi->requires_grad) return;
                    Tensor<T> g(node.grad.shape());
                    for (size_t i = 0; i < g.size(); ++i) {
                      T t = node.value[i];
                      g[i] = node.grad[i] * (T{1} - t * t);
                    }
                    xi->accumulate(std::move(g));
                  },
                  "tanh");
  }
  return y;
}

template <typename T>
DiffTensor<T> relu(const DiffTensor<T>& x) {
  Tensor<T> out(x.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] > T{0} ? x.value()[i] : T{0};
  DiffTensor<T> y(std::move(out));
  if (recording<T>({&x})) {
    auto xi = x.impl();
    y.attach_node({xi},
                  [xi](typename DiffTensor<T>::Impl& node) {
                    if (!xi->requires_grad) return;
                    const T scale = static_cast<T>(testhook::relu_grad_scale);
                    Tensor<T> g(node.grad.shape());
                    // subgradient at 0 is 0
                    for (size_t i = 0; i < g.size(); ++i)
                      g[i] = xi->value[i] > T{0} ? node.grad[i] * scale : T{0};
                    xi->accumulate(std::move(g));
                  },
                  "relu");
  }
  return y;
}

template <typename T>
DiffTensor<T> concat_cols(const DiffTensor<T>& a, const DiffTensor<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[0] != b.shape()[0])
    throw ShapeMismatch("concat_cols: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const size_t batch = a.shape()[0], fa = a.shape()[1], fb = b.shape()[1];
  Tensor<T> out({batch, fa + fb});
  for (size_t i = 0; i < batch; ++i) {
    std::memcpy(out.data() + i * (fa + fb), a.value().data() + i * fa, fa * sizeof(T));
    std::memcpy(out.data() + i * (fa + fb) + fa, b.value().data() + i * fb, fb * sizeof(T));
  }
  DiffTensor<T> y(std::move(out));
  if (recording<T>({&a, &b})) {
    auto ai = a.impl(), bi = b.impl();
    y.attach_node({ai, bi},
                  [ai, bi, batch, fa, fb](typename DiffTensor<T>::Impl& node) {
                    if (ai->requires_grad) {
                      Tensor<T> g({batch, fa});
                      for (size_t i = 0; i < batch; ++i)
                        std::memcpy(g.data() + i * fa, node.grad.data() + i * (fa + fb),
                                    fa * sizeof(T));
                      ai->accumulate(std::move(g));
                    }
                    if (bi->requires_grad) {
                      Tensor<T> g({batch, fb});
                      for (size_t i = 0; i < batch; ++i)
                        std::memcpy(g.data() + i * fb, node.grad.data() + i * (fa + fb) + fa,
                                    fb * sizeof(T));
                      bi->accumulate(std::move(g));
                    }
                  },
                  "concat_cols");
  }
  return y;
}

template <typename T>
DiffTensor<T> reshape(const DiffTensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw ShapeMismatch("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor<T> out(shape, x.value().vec());
  DiffTensor<T> y(std::move(out));
  if (recording<T>({&x})) {
    auto xi = x.impl();
    y.attach_node({xi},
                  [xi](typename DiffTensor<T>::Impl& node) {
                    if (!xi->requires_grad) return;
                    Tensor<T> g(xi->value.shape(), node.grad.vec());
                    xi->accumulate(std::move(g));
                  },
                  "reshape");
  }
  return y;
}

// ---- conv1d ---------------------------------------------------------------

namespace {

// Gathers the padded receptive fields of one batch item into [len x in_ch*k].
template <typename T>
void im2col(const T* x, size_t in_ch, size_t len, size_t k, size_t pad_l, T* cols) {
  for (size_t l = 0; l < len; ++l) {
    T* row = cols + l * in_ch * k;
    for (size_t c = 0; c < in_ch; ++c) {
      const T* xc = x + c * len;
      for (size_t j = 0; j < k; ++j) {
        const ptrdiff_t src = static_cast<ptrdiff_t>(l + j) - static_cast<ptrdiff_t>(pad_l);
        row[c * k + j] =
            (src >= 0 && src < static_cast<ptrdiff_t>(len)) ? xc[src] : T{0};
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, size_t in_ch, size_t len, size_t k, size_t pad_l, T* dx) {
  for (size_t l = 0; l < len; ++l) {
    const T* row = cols + l * in_ch * k;
    for (size_t c = 0; c < in_ch; ++c) {
      T* dxc = dx + c * len;
      for (size_t j = 0; j < k; ++j) {
        const ptrdiff_t dst = static_cast<ptrdiff_t>(l + j) - static_cast<ptrdiff_t>(pad_l);
        if (dst >= 0 && dst < static_cast<ptrdiff_t>(len)) dxc[dst] += row[c * k + j];
      }
    }
  }
}

}  // namespace

template <typename T>
DiffTensor<T> conv1d(const DiffTensor<T>& x, const ConvParams<T>& p) {
  if (x.shape().size() != 3) throw ShapeMismatch("conv1d: input must be [batch x ch x len]");
  const size_t batch = x.shape()[0], in_ch = x.shape()[1], len = x.shape()[2];
  if (p.weights.shape().size() != 3 || p.in_channels() != in_ch)
    throw ShapeMismatch("conv1d: weights " + shape_str(p.weights.shape()) + " vs input " +
                        shape_str(x.shape()));
  if (p.bias.shape() != Shape{p.out_maps()}) throw ShapeMismatch("conv1d: bad bias shape");
  const size_t out_maps = p.out_maps(), k = p.kernel();
  const size_t pad_l = (k - 1) / 2;

  Tensor<T> out({batch, out_maps, len});
  AlignedVec<T> cols(len * in_ch * k);
  ConstMatMap<T> wmat(p.weights.value().data(), out_maps, in_ch * k);
  for (size_t b = 0; b < batch; ++b) {
    im2col(x.value().data() + b * in_ch * len, in_ch, len, k, pad_l, cols.data());
    ConstMatMap<T> cmat(cols.data(), len, in_ch * k);
    MatMap<T> ymat(out.data() + b * out_maps * len, out_maps, len);
    ymat.noalias() = wmat * cmat.transpose();  // [out_maps x len], contiguous
    ymat.colwise() +=
        Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(p.bias.value().data(), out_maps);
  }
  check_finite(out, "conv1d");

  DiffTensor<T> y(std::move(out));
  if (recording<T>({&x, &p.weights, &p.bias})) {
    auto xi = x.impl(), wi = p.weights.impl(), bi = p.bias.impl();
    y.attach_node(
        {xi, wi, bi},
        [xi, wi, bi, batch, in_ch, len, out_maps, k, pad_l](typename DiffTensor<T>::Impl& node) {
          AlignedVec<T> cols(len * in_ch * k);
          AlignedVec<T> dcols(len * in_ch * k);
          ConstMatMap<T> wmat(wi->value.data(), out_maps, in_ch * k);
          if (wi->requires_grad && wi->grad.empty()) wi->grad = Tensor<T>(wi->value.shape());
          if (bi->requires_grad && bi->grad.empty()) bi->grad = Tensor<T>(bi->value.shape());
          if (xi->requires_grad && xi->grad.empty()) xi->grad = Tensor<T>(xi->value.shape());
          for (size_t b = 0; b < batch; ++b) {
            ConstMatMap<T> dymat(node.grad.data() + b * out_maps * len, out_maps, len);
            if (wi->requires_grad || bi->requires_grad)
              im2col(xi->value.data() + b * in_ch * len, in_ch, len, k, pad_l, cols.data());
            if (wi->requires_grad) {
              ConstMatMap<T> cmat(cols.data(), len, in_ch * k);
              MatMap<T>(wi->grad.data(), out_maps, in_ch * k).noalias() += dymat * cmat;
            }
            if (bi->requires_grad)
              Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(bi->grad.data(), out_maps) +=
                  dymat.rowwise().sum();
            if (xi->requires_grad) {
              MatMap<T>(dcols.data(), len, in_ch * k).noalias() = dymat.transpose() * wmat;
              col2im_add(dcols.data(), in_ch, len, k, pad_l, xi->grad.data() + b * in_ch * len);
            }
          }
        },
        "conv1d");
  }
  return y;
}

// ---- maxpool1d -------------------------------------------------------------

template <typename T>
DiffTensor<T> maxpool1d(const DiffTensor<T>& x, size_t window, size_t stride) {
  if (x.shape().size() != 3) throw ShapeMismatch("maxpool1d: input must be [batch x ch x len]");
  const size_t batch = x.shape()[0], ch = x.shape()[1], len = x.shape()[2];
  if (len < window) throw InputTooShort("maxpool1d: len < window");
  const size_t out_len = (len - window) / stride + 1;

  Tensor<T> out({batch, ch, out_len});
  std::vector<int32_t> argmax(batch * ch * out_len);
  for (size_t b = 0; b < batch; ++b)
    for (size_t c = 0; c < ch; ++c) {
      const T* xc = x.value().data() + (b * ch + c) * len;
      T* oc = out.data() + (b * ch + c) * out_len;
      int32_t* ac = argmax.data() + (b * ch + c) * out_len;
      for (size_t l = 0; l < out_len; ++l) {
        size_t best = l * stride;
        T bv = xc[best];
        for (size_t j = 1; j < window; ++j) {
          const size_t idx = l * stride + j;
          if (xc[idx] > bv) {  // strict: ties keep the first maximal index
            bv = xc[idx];
            best = idx;
          }
        }
        oc[l] = bv;
        ac[l] = static_cast<int32_t>(best);
      }
    }

  DiffTensor<T> y(std::move(out));
  if (recording<T>({&x})) {
    auto xi = x.impl();
    y.attach_node({xi},
                  [xi, argmax = std::move(argmax), batch, ch, len,
                   out_len](typename DiffTensor<T>::Impl& node) {
                    if (!xi->requires_grad) return;
                    if (xi->grad.empty()) xi->grad = Tensor<T>(xi->value.shape());
                    for (size_t bc = 0; bc < batch * ch; ++bc) {
                      const T* g = node.grad.data() + bc * out_len;
                      const int32_t* ac = argmax.data() + bc * out_len;
                      T* dx = xi->grad.data() + bc * len;
                      for (size_t l = 0; l < out_len; ++l) dx[ac[l]] += g[l];
                    }
                  },
                  "maxpool1d");
  }
  return y;
}

// ---- dropout ----------------------------------------------------------------

template <typename T>
DiffTensor<T> dropout(const DiffTensor<T>& x, double rate, Mode mode, uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) throw InvalidConfig("dropout rate must be in [0, 1)");
  if (mode == Mode::kEval || rate == 0.0) return x;

  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  CounterRng rng(seed);
  Tensor<T> mask(x.shape());
  for (size_t i = 0; i < mask.size(); ++i) mask[i] = rng.next_double() < rate ? T{0} : scale;

  Tensor<T> out(x.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * mask[i];
  DiffTensor<T> y(std::move(out));
  if (recording<T>({&x})) {
    auto xi = x.impl();
    y.attach_node({xi},
                  [xi, mask = std::move(mask)](typename DiffTensor<T>::Impl& node) {
                    if (!xi->requires_grad) return;
                    Tensor<T> g(node.grad.shape());
                    for (size_t i = 0; i < g.size(); ++i) g[i] = node.grad[i] * mask[i];
                    xi->accumulate(std::move(g));
                  },
                  "dropout");
  }
  return y;
}

// ---- batchnorm ----------------------------------------------------------------

template <typename T>
DiffTensor<T> batchnorm(const DiffTensor<T>& x, BatchNormParams<T>& p, Mode mode) {
  if (x.shape().size() != 2) throw ShapeMismatch("batchnorm: input must be [batch x features]");
  const size_t batch = x.shape()[0], feats = x.shape()[1];
  if (p.gamma.shape() != Shape{feats} || p.beta.shape() != Shape{feats})
    throw ShapeMismatch("batchnorm: parameter width != feature width");

  Tensor<T> xhat({batch, feats});
  Tensor<T> invstd({feats});
  if (mode == Mode::kTrain) {
    if (batch < 2) throw DegenerateBatch("batchnorm: train mode needs batch >= 2");
    for (size_t f = 0; f < feats; ++f) {
      T mean{0};
      for (size_t b = 0; b < batch; ++b) mean += x.value().at(b, f);
      mean /= static_cast<T>(batch);
      T var{0};
      for (size_t b = 0; b < batch; ++b) {
        const T d = x.value().at(b, f) - mean;
        var += d * d;
      }
      var /= static_cast<T>(batch);  // population variance
      invstd[f] = T{1} / std::sqrt(var + p.eps);
      for (size_t b = 0; b < batch; ++b) xhat.at(b, f) = (x.value().at(b, f) - mean) * invstd[f];
      p.running_mean[f] = (T{1} - p.momentum) * p.running_mean[f] + p.momentum * mean;
      p.running_var[f] = (T{1} - p.momentum) * p.running_var[f] + p.momentum * var;
    }
  } else {
    for (size_t f = 0; f < feats; ++f) {
      invstd[f] = T{1} / std::sqrt(p.running_var[f] + p.eps);
      for (size_t b = 0; b < batch; ++b)
        xhat.at(b, f) = (x.value().at(b, f) - p.running_mean[f]) * invstd[f];
    }
  }

  Tensor<T> out({batch, feats});
  for (size_t b = 0; b < batch; ++b)
    for (size_t f = 0; f < feats; ++f)
      out.at(b, f) = p.gamma.value()[f] * xhat.at(b, f) + p.beta.value()[f];
  check_finite(out, "batchnorm");

  DiffTensor<T> y(std::move(out));
  if (recording<T>({&x, &p.gamma, &p.beta})) {
    auto xi = x.impl(), gi = p.gamma.impl(), bi = p.beta.impl();
    const bool train = mode == Mode::kTrain;
    y.attach_node(
        {xi, gi, bi},
        [xi, gi, bi, xhat = std::move(xhat), invstd = std::move(invstd), batch, feats,
         train](typename DiffTensor<T>::Impl& node) {
          if (gi->requires_grad || bi->requires_grad) {
            Tensor<T> dgamma({feats}), dbeta({feats});
            for (size_t b = 0; b < batch; ++b)
              for (size_t f = 0; f < feats; ++f) {
                dgamma[f] += node.grad.at(b, f) * xhat.at(b, f);
                dbeta[f] += node.grad.at(b, f);
              }
            if (gi->requires_grad) gi->accumulate(std::move(dgamma));
            if (bi->requires_grad) bi->accumulate(std::move(dbeta));
          }
          if (!xi->requires_grad) return;
          Tensor<T> dx({batch, feats});
          if (train) {
            for (size_t f = 0; f < feats; ++f) {
              T sum_dy{0}, sum_dy_xhat{0};
              for (size_t b = 0; b < batch; ++b) {
                const T dyh = node.grad.at(b, f) * gi->value[f];
                sum_dy += dyh;
                sum_dy_xhat += dyh * xhat.at(b, f);
              }
              const T n = static_cast<T>(batch);
              for (size_t b = 0; b < batch; ++b) {
                const T dyh = node.grad.at(b, f) * gi->value[f];
                dx.at(b, f) =
                    (invstd[f] / n) * (n * dyh - sum_dy - xhat.at(b, f) * sum_dy_xhat);
              }
            }
          } else {
            for (size_t b = 0; b < batch; ++b)
              for (size_t f = 0; f < feats; ++f)
                dx.at(b, f) = node.grad.at(b, f) * gi->value[f] * invstd[f];
          }
          xi->accumulate(std::move(dx));
        },
        "batchnorm");
  }
  return y;
}

// ---- dense / linear ---------------------------------------------------------

namespace {

// y = x . W + b with W [in x out]; `transposed` flips to x . W^T, W [out x in].
template <typename T>
DiffTensor<T> affine(const DiffTensor<T>& x, const DiffTensor<T>& w, const DiffTensor<T>& b,
                     bool transposed, const char* op) {
  if (x.shape().size() != 2 || w.shape().size() != 2)
    throw ShapeMismatch(std::string(op) + ": expects 2-D input and weights");
  const size_t batch = x.shape()[0], in = x.shape()[1];
  const size_t w_in = transposed ? w.shape()[1] : w.shape()[0];
  const size_t out = transposed ? w.shape()[0] : w.shape()[1];
  if (w_in != in || b.shape() != Shape{out})
    throw ShapeMismatch(std::string(op) + ": input " + shape_str(x.shape()) + ", weights " +
                        shape_str(w.shape()));

  Tensor<T> y_val({batch, out});
  {
    ConstMatMap<T> xm(x.value().data(), batch, in);
    MatMap<T> ym(y_val.data(), batch, out);
    if (transposed) {
      ConstMatMap<T> wm(w.value().data(), out, in);
      ym.noalias() = xm * wm.transpose();
    } else {
      ConstMatMap<T> wm(w.value().data(), in, out);
      ym.noalias() = xm * wm;
    }
    for (size_t i = 0; i < batch; ++i)
      for (size_t j = 0; j < out; ++j) y_val.at(i, j) += b.value()[j];
  }
  check_finite(y_val, op);

  DiffTensor<T> y(std::move(y_val));
  if (recording<T>({&x, &w, &b})) {
    auto xi = x.impl(), wi = w.impl(), bi = b.impl();
    y.attach_node(
        {xi, wi, bi},
        [xi, wi, bi, batch, in, out, transposed](typename DiffTensor<T>::Impl& node) {
          ConstMatMap<T> dym(node.grad.data(), batch, out);
          ConstMatMap<T> xm(xi->value.data(), batch, in);
          if (wi->requires_grad) {
            if (wi->grad.empty()) wi->grad = Tensor<T>(wi->value.shape());
            if (transposed)
              MatMap<T>(wi->grad.data(), out, in).noalias() += dym.transpose() * xm;
            else
              MatMap<T>(wi->grad.data(), in, out).noalias() += xm.transpose() * dym;
          }
          if (bi->requires_grad) {
            if (bi->grad.empty()) bi->grad = Tensor<T>(bi->value.shape());
            for (size_t i = 0; i < batch; ++i)
              for (size_t j = 0; j < out; ++j) bi->grad[j] += node.grad.at(i, j);
          }
          if (xi->requires_grad) {
            if (xi->grad.empty()) xi->grad = Tensor<T>(xi->value.shape());
            MatMap<T> dxm(xi->grad.data(), batch, in);
            if (transposed) {
              ConstMatMap<T> wm(wi->value.data(), out, in);
              dxm.noalias() += dym * wm;
            } else {
              ConstMatMap<T> wm(wi->value.data(), in, out);
              dxm.noalias() += dym * wm.transpose();
            }
          }
        },
        op);
  }
  return y;
}

}  // namespace

template <typename T>
DiffTensor<T> dense(const DiffTensor<T>& x, const DiffTensor<T>& w, const DiffTensor<T>& b) {
  return affine(x, w, b, /*transposed=*/false, "dense");
}

// ---- LSTM --------------------------------------------------------------------

template <typename T>
LSTMParams<T> LSTMParams<T>::zeros(size_t hidden, size_t input) {
  LSTMParams<T> p;
  p.hidden = hidden;
  p.input = input;
  const Shape wshape{hidden, hidden + input};
  for (auto* w : {&p.w_forget, &p.w_input, &p.w_candidate, &p.w_output})
    *w = DiffTensor<T>::param(Tensor<T>(wshape));
  for (auto* b : {&p.b_forget, &p.b_input, &p.b_candidate, &p.b_output})
    *b = DiffTensor<T>::param(Tensor<T>({hidden}));
  return p;
}

namespace {

template <typename T>
void check_lstm_shapes(const LSTMParams<T>& p) {
  const Shape wshape{p.hidden, p.hidden + p.input};
  for (const auto* w : {&p.w_forget, &p.w_input, &p.w_candidate, &p.w_output})
    if (w->shape() != wshape) throw ShapeMismatch("lstm: gate weights must be [hidden x (hidden+input)]");
  for (const auto* b : {&p.b_forget, &p.b_input, &p.b_candidate, &p.b_output})
    if (b->shape() != Shape{p.hidden}) throw ShapeMismatch("lstm: gate bias must be [hidden]");
}

}  // namespace

template <typename T>
std::pair<DiffTensor<T>, DiffTensor<T>> lstm_cell(const DiffTensor<T>& x_t,
                                                  const DiffTensor<T>& h_prev,
                                                  const DiffTensor<T>& c_prev,
                                                  const LSTMParams<T>& p) {
  check_lstm_shapes(p);
  if (x_t.shape().size() != 2 || x_t.shape()[1] != p.input)
    throw ShapeMismatch("lstm_cell: input must be [batch x input]");
  const size_t batch = x_t.shape()[0];
  if (h_prev.shape() != Shape{batch, p.hidden} || c_prev.shape() != Shape{batch, p.hidden})
    throw ShapeMismatch("lstm_cell: state must be [batch x hidden]");

  const DiffTensor<T> v = concat_cols(h_prev, x_t);
  const DiffTensor<T> f = sigmoid(affine(v, p.w_forget, p.b_forget, true, "lstm_gate"));
  const DiffTensor<T> i = sigmoid(affine(v, p.w_input, p.b_input, true, "lstm_gate"));
  const DiffTensor<T> g = tanh_op(affine(v, p.w_candidate, p.b_candidate, true, "lstm_gate"));
  const DiffTensor<T> o = sigmoid(affine(v, p.w_output, p.b_output, true, "lstm_gate"));
  DiffTensor<T> c = add(mul(f, c_prev), mul(i, g));
  DiffTensor<T> h = mul(o, tanh_op(c));
  return {std::move(h), std::move(c)};
}

// Fused sequence node: single GEMM per step over the four stacked gates,
// hand-written backward-through-time.
template <typename T>
DiffTensor<T> lstm_sequence(const DiffTensor<T>& x, const LSTMParams<T>& p,
                            double recurrent_dropout_rate, Mode mode, uint64_t seed) {
  check_lstm_shapes(p);
  if (x.shape().size() != 3 || x.shape()[2] != p.input)
    throw ShapeMismatch("lstm_sequence: input must be [batch x time x input]");
  const size_t batch = x.shape()[0], time = x.shape()[1];
  const size_t H = p.hidden, I = p.input, V = H + I;
  if (time < 1) throw ShapeMismatch("lstm_sequence: time >= 1 required");

  // stack gate weights [4H x V], rows ordered f, i, g, o
  Tensor<T> w4({4 * H, V});
  Tensor<T> b4({4 * H});
  {
    const DiffTensor<T>* ws[4] = {&p.w_forget, &p.w_input, &p.w_candidate, &p.w_output};
    const DiffTensor<T>* bs[4] = {&p.b_forget, &p.b_input, &p.b_candidate, &p.b_output};
    for (size_t gidx = 0; gidx < 4; ++gidx) {
      std::memcpy(w4.data() + gidx * H * V, ws[gidx]->value().data(), H * V * sizeof(T));
      std::memcpy(b4.data() + gidx * H, bs[gidx]->value().data(), H * sizeof(T));
    }
  }

  // variational recurrent dropout: one fixed mask per sequence on h_prev
  Tensor<T> rmask;
  const bool use_rmask = mode == Mode::kTrain && recurrent_dropout_rate > 0.0;
  if (use_rmask) {
    if (recurrent_dropout_rate < 0.0 || recurrent_dropout_rate >= 1.0)
      throw InvalidConfig("recurrent dropout rate must be in [0, 1)");
    const T scale = static_cast<T>(1.0 / (1.0 - recurrent_dropout_rate));
    CounterRng rng(seed);
    rmask = Tensor<T>({batch, H});
    for (size_t j = 0; j < rmask.size(); ++j)
      rmask[j] = rng.next_double() < recurrent_dropout_rate ? T{0} : scale;
  }

  const bool record = recording<T>({&x, &p.w_forget, &p.w_input, &p.w_candidate, &p.w_output,
                                    &p.b_forget, &p.b_input, &p.b_candidate, &p.b_output});

  // saved activations for BPTT (post-activation gates, cell and hidden states)
  Tensor<T> gates, c_all, h_all;
  if (record) {
    gates = Tensor<T>({time, batch, 4 * H});
    c_all = Tensor<T>({time, batch, H});
    h_all = Tensor<T>({time, batch, H});
  }

  Tensor<T> h({batch, H}), c({batch, H});
  AlignedVec<T> v(batch * V), z(batch * 4 * H), tanh_c(batch * H);
  ConstMatMap<T> wmat(w4.data(), 4 * H, V);
  using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
  for (size_t t = 0; t < time; ++t) {
    for (size_t b = 0; b < batch; ++b) {
      T* row = v.data() + b * V;
      const T* hb = h.data() + b * H;
      if (use_rmask)
        for (size_t j = 0; j < H; ++j) row[j] = hb[j] * rmask.at(b, j);
      else
        std::memcpy(row, hb, H * sizeof(T));
      const T* xt = x.value().data() + (b * time + t) * I;
      std::memcpy(row + H, xt, I * sizeof(T));
    }
    {
      MatMap<T> zm(z.data(), batch, 4 * H);
      zm.noalias() = ConstMatMap<T>(v.data(), batch, V) * wmat.transpose();
      zm.rowwise() +=
          Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b4.data(), 4 * H);
    }
    for (size_t b = 0; b < batch; ++b) {
      T* zb = z.data() + b * 4 * H;
      // in-place vectorized gate activations: f i o sigmoid, g tanh
      ArrMap zf(zb, H), zi(zb + H, H), zg(zb + 2 * H, H), zo(zb + 3 * H, H);
      zf = T{1} / (T{1} + (-zf).exp());
      zi = T{1} / (T{1} + (-zi).exp());
      zg = zg.tanh();
      zo = T{1} / (T{1} + (-zo).exp());
      ArrMap cb(c.data() + b * H, H);
      ArrMap hb(h.data() + b * H, H);
      ArrMap tcb(tanh_c.data() + b * H, H);
      cb = zf * cb + zi * zg;
      tcb = cb.tanh();
      hb = zo * tcb;
      if (record) {
        std::memcpy(gates.data() + (t * batch + b) * 4 * H, zb, 4 * H * sizeof(T));
        std::memcpy(c_all.data() + (t * batch + b) * H, c.data() + b * H, H * sizeof(T));
        std::memcpy(h_all.data() + (t * batch + b) * H, h.data() + b * H, H * sizeof(T));
      }
    }
  }
  check_finite(h, "lstm_sequence");

  DiffTensor<T> y(std::move(h));
  if (record) {
    auto xi = x.impl();
    auto wf = p.w_forget.impl(), wi_ = p.w_input.impl(), wg = p.w_candidate.impl(),
         wo = p.w_output.impl();
    auto bf = p.b_forget.impl(), bi_ = p.b_input.impl(), bg = p.b_candidate.impl(),
         bo = p.b_output.impl();
    y.attach_node(
        {xi, wf, wi_, wg, wo, bf, bi_, bg, bo},
        [=, gates = std::move(gates), c_all = std::move(c_all), h_all = std::move(h_all),
         rmask = std::move(rmask), w4 = std::move(w4)](typename DiffTensor<T>::Impl& node) {
          Tensor<T> dw4({4 * H, V});
          Tensor<T> db4({4 * H});
          Tensor<T> dh(node.grad);  // [batch x H]
          Tensor<T> dc({batch, H});
          AlignedVec<T> v(batch * V), dz(batch * 4 * H), dv(batch * V);
          const bool need_dx = xi->requires_grad;
          if (need_dx && xi->grad.empty()) xi->grad = Tensor<T>(xi->value.shape());
          ConstMatMap<T> wmat(w4.data(), 4 * H, V);
          for (size_t t = time; t-- > 0;) {
            // rebuild the step input [mh_{t-1}, x_t]
            for (size_t b = 0; b < batch; ++b) {
              T* row = v.data() + b * V;
              if (t == 0) {
                std::fill(row, row + H, T{0});
              } else {
                const T* hb = h_all.data() + ((t - 1) * batch + b) * H;
                if (rmask.size())
                  for (size_t j = 0; j < H; ++j) row[j] = hb[j] * rmask.at(b, j);
                else
                  std::memcpy(row, hb, H * sizeof(T));
              }
              std::memcpy(row + H, xi->value.data() + (b * time + t) * I, I * sizeof(T));
            }
            for (size_t b = 0; b < batch; ++b) {
              using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
              using ConstArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
              const T* gt = gates.data() + (t * batch + b) * 4 * H;
              ConstArrMap f(gt, H), i(gt + H, H), g(gt + 2 * H, H), o(gt + 3 * H, H);
              ConstArrMap cb(c_all.data() + (t * batch + b) * H, H);
              ArrMap dhb(dh.data() + b * H, H);
              ArrMap dcb(dc.data() + b * H, H);
              T* dzb = dz.data() + b * 4 * H;
              ArrMap dzf(dzb, H), dzi(dzb + H, H), dzg(dzb + 2 * H, H), dzo(dzb + 3 * H, H);
              const Eigen::Array<T, Eigen::Dynamic, 1> tc = cb.tanh();
              dcb += dhb * o * (T{1} - tc.square());
              if (t == 0) {
                dzf.setZero();  // c_{-1} = 0
              } else {
                ConstArrMap cprev(c_all.data() + ((t - 1) * batch + b) * H, H);
                dzf = dcb * cprev * f * (T{1} - f);
              }
              dzi = dcb * g * i * (T{1} - i);
              dzg = dcb * i * (T{1} - g.square());
              dzo = dhb * tc * o * (T{1} - o);
              dcb *= f;  // becomes dc_{t-1}
            }
            ConstMatMap<T> dzm(dz.data(), batch, 4 * H);
            MatMap<T>(dw4.data(), 4 * H, V).noalias() +=
                dzm.transpose() * ConstMatMap<T>(v.data(), batch, V);
            for (size_t b = 0; b < batch; ++b)
              for (size_t j = 0; j < 4 * H; ++j) db4[j] += dz[b * 4 * H + j];
            MatMap<T>(dv.data(), batch, V).noalias() = dzm * wmat;
            for (size_t b = 0; b < batch; ++b) {
              T* dhb = dh.data() + b * H;
              const T* dvb = dv.data() + b * V;
              if (rmask.size())
                for (size_t j = 0; j < H; ++j) dhb[j] = dvb[j] * rmask.at(b, j);
              else
                std::memcpy(dhb, dvb, H * sizeof(T));
              if (need_dx) {
                T* dxt = xi->grad.data() + (b * time + t) * I;
                for (size_t j = 0; j < I; ++j) dxt[j] += dvb[H + j];
              }
            }
          }
          typename DiffTensor<T>::Impl* wimpls[4] = {wf.get(), wi_.get(), wg.get(), wo.get()};
          typename DiffTensor<T>::Impl* bimpls[4] = {bf.get(), bi_.get(), bg.get(), bo.get()};
          for (size_t gidx = 0; gidx < 4; ++gidx) {
            if (wimpls[gidx]->requires_grad) {
              Tensor<T> gw({H, V});
              std::memcpy(gw.data(), dw4.data() + gidx * H * V, H * V * sizeof(T));
              wimpls[gidx]->accumulate(std::move(gw));
            }
            if (bimpls[gidx]->requires_grad) {
              Tensor<T> gb({H});
              std::memcpy(gb.data(), db4.data() + gidx * H, H * sizeof(T));
              bimpls[gidx]->accumulate(std::move(gb));
            }
          }
        },
        "lstm_sequence");
  }
  return y;
}

// ---- softmax / cross entropy ---------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.shape().size() != 2) throw ShapeMismatch("softmax: input must be [batch x classes]");
  const size_t batch = logits.shape()[0], classes = logits.shape()[1];
  Tensor<T> probs(logits.shape());
  for (size_t b = 0; b < batch; ++b) {
    T mx = logits.at(b, 0);
    for (size_t k = 1; k < classes; ++k) mx = std::max(mx, logits.at(b, k));
    T denom{0};
    for (size_t k = 0; k < classes; ++k) {
      probs.at(b, k) = std::exp(logits.at(b, k) - mx);
      denom += probs.at(b, k);
    }
    for (size_t k = 0; k < classes; ++k) probs.at(b, k) /= denom;
  }
  return probs;
}

template <typename T>
DiffTensor<T> softmax_cross_entropy(const DiffTensor<T>& logits, const std::vector<int>& labels) {
  if (logits.shape().size() != 2) throw ShapeMismatch("softmax_ce: logits must be [batch x classes]");
  const size_t batch = logits.shape()[0], classes = logits.shape()[1];
  if (labels.size() != batch) throw ShapeMismatch("softmax_ce: labels size != batch");
  for (int l : labels)
    if (l < 0 || static_cast<size_t>(l) >= classes)
      throw LabelOutOfRange("softmax_ce: label " + std::to_string(l) + " out of range");

  Tensor<T> probs = softmax(logits.value());
  T loss{0};
  for (size_t b = 0; b < batch; ++b) {
    // log prob via the stabilized form to avoid log(0) for extreme logits
    T mx = logits.value().at(b, 0);
    for (size_t k = 1; k < classes; ++k) mx = std::max(mx, logits.value().at(b, k));
    T lse{0};
    for (size_t k = 0; k < classes; ++k) lse += std::exp(logits.value().at(b, k) - mx);
    lse = std::log(lse);
    loss -= (logits.value().at(b, static_cast<size_t>(labels[b])) - mx - lse);
  }
  loss /= static_cast<T>(batch);

  DiffTensor<T> y(Tensor<T>::scalar(loss));
  if (recording<T>({&logits})) {
    auto li = logits.impl();
    y.attach_node({li},
                  [li, probs = std::move(probs), labels, batch,
                   classes](typename DiffTensor<T>::Impl& node) {
                    if (!li->requires_grad) return;
                    const T gy = node.grad[0];
                    Tensor<T> g({batch, classes});
                    for (size_t b = 0; b < batch; ++b)
                      for (size_t k = 0; k < classes; ++k) {
                        T v = probs.at(b, k);
                        if (static_cast<size_t>(labels[b]) == k) v -= T{1};
                        g.at(b, k) = gy * v / static_cast<T>(batch);
                      }
                    li->accumulate(std::move(g));
                  },
                  "softmax_cross_entropy");
  }
  return y;
}

// ---- explicit instantiations -----------------------------------------------

#define SSNET_INSTANTIATE_LAYERS(T)                                                          \
  template DiffTensor<T> add<T>(const DiffTensor<T>&, const DiffTensor<T>&);                 \
  template DiffTensor<T> mul<T>(const DiffTensor<T>&, const DiffTensor<T>&);                 \
  template DiffTensor<T> sum<T>(const DiffTensor<T>&);                                       \
  template DiffTensor<T> sigmoid<T>(const DiffTensor<T>&);                                   \
  template DiffTensor<T> tanh_op<T>(const DiffTensor<T>&);                                   \
  template DiffTensor<T> relu<T>(const DiffTensor<T>&);                                      \
  template DiffTensor<T> concat_cols<T>(const DiffTensor<T>&, const DiffTensor<T>&);         \
  template DiffTensor<T> reshape<T>(const DiffTensor<T>&, Shape);                            \
  template DiffTensor<T> conv1d<T>(const DiffTensor<T>&, const ConvParams<T>&);              \
  template DiffTensor<T> maxpool1d<T>(const DiffTensor<T>&, size_t, size_t);                 \
  template DiffTensor<T> dropout<T>(const DiffTensor<T>&, double, Mode, uint64_t);           \
  template DiffTensor<T> batchnorm<T>(const DiffTensor<T>&, BatchNormParams<T>&, Mode);      \
  template std::pair<DiffTensor<T>, DiffTensor<T>> lstm_cell<T>(                             \
      const DiffTensor<T>&, const DiffTensor<T>&, const DiffTensor<T>&, const LSTMParams<T>&); \
  template DiffTensor<T> lstm_sequence<T>(const DiffTensor<T>&, const LSTMParams<T>&, double, \
                                          Mode, uint64_t);                                   \
  template DiffTensor<T> dense<T>(const DiffTensor<T>&, const DiffTensor<T>&,                \
                                  const DiffTensor<T>&);                                     \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                           \
  template DiffTensor<T> softmax_cross_entropy<T>(const DiffTensor<T>&,                      \
                                                  const std::vector<int>&);                  \
  template struct LSTMParams<T>;

SSNET_INSTANTIATE_LAYERS(float)
SSNET_INSTANTIATE_LAYERS(double)

#undef SSNET_INSTANTIATE_LAYERS

}  // namespace ssnet::nn
