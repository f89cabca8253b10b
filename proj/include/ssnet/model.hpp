#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ssnet/layers.hpp"

namespace ssnet::model {

using nn::DiffTensor;
using nn::Mode;
using nn::Tensor;

// Defaults reproduce the published layer table exactly; any override is
// recorded in the model manifest.
struct SSNetConfig {
  size_t n_channels = 4;
  size_t epoch_len = 3000;
  size_t n_classes = 5;
  std::vector<size_t> cnn_maps = {64, 32, 20, 16, 10};
  std::vector<size_t> cnn_kernels = {5, 3, 2, 8, 3};
  size_t pool = 3;
  double dropout = 0.02;
  std::vector<size_t> lstm_sizes = {64, 20};
  double recurrent_dropout = 0.02;

  void validate() const;  // throws InvalidConfig
  // pooled lengths after each conv block, e.g. 3000 -> 1000,333,111,37,12
  std::vector<size_t> shape_chain() const;
  size_t flat_width() const;    // cnn_maps.back() * shape_chain().back()
  size_t concat_width() const;  // flat_width() + lstm_sizes.back()
  bool is_default_topology() const;

  nlohmann::json to_json() const;
  static SSNetConfig from_json(const nlohmann::json& j);
};

struct ParamInfo {
  std::string name;
  nn::Shape shape;
  size_t count = 0;
};

struct Prediction {
  std::vector<int> classes;
  Tensor<double> probabilities;  // [batch x n_classes]
};

template <typename T>
class SSNet {
 public:
  // Glorot-uniform weights, zero biases, +1 forget-gate bias offset;
  // deterministic under init_seed.
  static SSNet build(const SSNetConfig& config, uint64_t init_seed);

  const SSNetConfig& config() const { return config_; }
  uint64_t init_seed() const { return init_seed_; }

  // Conv branch consumes [batch x channels x epoch_len]; the recurrent
  // branch consumes the same epoch as an epoch_len-step sequence of
  // n_channels-dim inputs. Branch outputs are concatenated into the
  // classifier; logits come back raw (softmax lives in the loss/predict).
  DiffTensor<T> forward(const DiffTensor<T>& batch, Mode mode, uint64_t dropout_seed = 0);
  std::pair<DiffTensor<T>, DiffTensor<T>> branch_features(const DiffTensor<T>& batch, Mode mode,
                                                          uint64_t dropout_seed = 0);
  DiffTensor<T> classify(const DiffTensor<T>& cnn_feat, const DiffTensor<T>& lstm_feat);

  // argmax of softmax(logits); ties break toward the lower class index
  Prediction predict(const Tensor<T>& batch);

  std::vector<DiffTensor<T>*> parameters();              // trainable leaves
  std::vector<std::pair<std::string, DiffTensor<T>*>> named_parameters();
  // trainable parameters plus batchnorm running stats
  std::vector<std::pair<std::string, Tensor<T>*>> named_state();

  std::vector<ParamInfo> param_summary() const;
  size_t param_count() const;
  nlohmann::json manifest() const;  // config, shape chain, counts, seed, weight checksum

  void save(const std::string& path) const;
  static SSNet load(const std::string& path);

  // snapshot/restore of all state tensors (model selection, checkpoints)
  std::vector<Tensor<T>> state_snapshot() const;
  void restore_state(const std::vector<Tensor<T>>& snapshot);

 private:
  SSNetConfig config_;
  uint64_t init_seed_ = 0;
  std::vector<nn::ConvParams<T>> conv_;
  nn::LSTMParams<T> lstm1_, lstm2_;
  nn::BatchNormParams<T> bn_;
  DiffTensor<T> fc_w_, fc_b_;  // [concat x classes], [classes]

  template <typename U>
  friend class SSNet;
};

using SSNetF = SSNet<float>;
using SSNetD = SSNet<double>;

}  // namespace ssnet::model
