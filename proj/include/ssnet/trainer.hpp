#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "ssnet/dataset.hpp"
#include "ssnet/model.hpp"

namespace ssnet::train {

struct HyperParams {
  double learning_rate = 0.002;
  size_t batch_size = 128;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  size_t max_epochs = 50;
  size_t patience = 10;
  uint64_t seed = 0;
  bool clip_enabled = false;  // off by default; flag exists for divergence recovery
  double clip_norm = 5.0;

  void validate() const;
  nlohmann::json to_json() const;
  static HyperParams from_json(const nlohmann::json& j);
};

template <typename T>
struct AdamState {
  std::vector<nn::Tensor<T>> m, v;  // shapes mirror the parameter list
  int64_t t = 0;                    // optimizer step count

  static AdamState init(const std::vector<nn::DiffTensor<T>*>& params);
};

// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;  bias-corrected m^, v^;
// p <- p - lr * m^ / (sqrt(v^) + eps). Gradients are read from the params'
// grad buffers; missing buffers count as zero gradient.
template <typename T>
void adam_step(const std::vector<nn::DiffTensor<T>*>& params, AdamState<T>& state,
               const HyperParams& hp);

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> val_accuracy;
  size_t best_epoch = 0;

  size_t epochs_completed() const { return train_loss.size(); }
  nlohmann::json to_json() const;
  static TrainHistory from_json(const nlohmann::json& j);
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> predictions;
  std::vector<int> labels;
};

template <typename T>
EvalResult evaluate(model::SSNet<T>& m, const data::EpochSet& set, size_t batch_size);

// Early-stop rule evaluated after each validation pass: with patience p and
// a strictly worsening loss, training runs exactly p+1 evaluations past the
// best epoch before stopping.
inline bool should_stop(size_t epoch, size_t best_epoch, size_t patience) {
  return epoch - best_epoch > patience;
}

// Per epoch: seeded shuffle, mini-batches (final short batch kept), train-mode
// forward, softmax-CE, backward, adam_step; then val loss/accuracy in eval
// mode. Keeps the parameters of the best val-loss epoch; stops at max_epochs
// or once (epoch - best_epoch) > patience. If checkpoint_path is non-empty a
// resumable checkpoint is written after every epoch.
template <typename T>
TrainHistory train(model::SSNet<T>& m, const data::EpochSet& train_set,
                   const data::EpochSet& val_set, const HyperParams& hp,
                   const std::string& checkpoint_path = "");

template <typename T>
struct Checkpoint {
  model::SSNet<T> model;  // current (last-epoch) parameters
  AdamState<T> adam;
  TrainHistory history;
  HyperParams hp;
  size_t next_epoch = 0;
  std::vector<nn::Tensor<T>> best_state;
  double best_val_loss = 0.0;
};

template <typename T>
void checkpoint_save(const std::string& path, model::SSNet<T>& m, const AdamState<T>& adam,
                     const TrainHistory& history, const HyperParams& hp, size_t next_epoch,
                     const std::vector<nn::Tensor<T>>& best_state, double best_val_loss);

template <typename T>
Checkpoint<T> checkpoint_load(const std::string& path);

// Continues a loaded run; bitwise-identical to the uninterrupted run at
// 64-bit because all per-epoch randomness is derived from (seed, epoch).
template <typename T>
TrainHistory train_resume(Checkpoint<T>& ck, const data::EpochSet& train_set,
                          const data::EpochSet& val_set,
                          const std::string& checkpoint_path = "");

}  // namespace ssnet::train
