#include "ssnet/trainer.hpp"

#if defined(__x86_64__) || defined(__SSE__)
#include <immintrin.h>
#endif

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ssnet/rng.hpp"
#include "ssnet/serialize.hpp"

namespace ssnet::train {

namespace {

// Saturated gates and z-scored inputs generate subnormal floats which run
// 10-100x slower on x86; flush them to zero for the duration of a training
// or evaluation pass. Scoped so library users keep their own FP environment.
struct DenormalFlushGuard {
#if defined(__x86_64__) || defined(__SSE__)
  unsigned int saved = _mm_getcsr();
  DenormalFlushGuard() { _mm_setcsr(saved | 0x8040); }  // FTZ | DAZ
  ~DenormalFlushGuard() { _mm_setcsr(saved); }
#endif
  DenormalFlushGuard(const DenormalFlushGuard&) = delete;
  DenormalFlushGuard& operator=(const DenormalFlushGuard&) = delete;
};

}  // namespace

void HyperParams::validate() const {
  if (!(learning_rate > 0)) throw InvalidConfig("learning_rate must be > 0");
  if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw InvalidConfig("beta1/beta2 must be in [0, 1)");
  if (!(eps_adam > 0)) throw InvalidConfig("eps_adam must be > 0");
  if (max_epochs < 1) throw InvalidConfig("max_epochs must be >= 1");
}

nlohmann::json HyperParams::to_json() const {
  nlohmann::json j;
  j["learning_rate"] = learning_rate;
  j["batch_size"] = batch_size;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["eps_adam"] = eps_adam;
  j["max_epochs"] = max_epochs;
  j["patience"] = patience;
  j["seed"] = seed;
  j["clip_enabled"] = clip_enabled;
  j["clip_norm"] = clip_norm;
  return j;
}

HyperParams HyperParams::from_json(const nlohmann::json& j) {
  HyperParams hp;
  hp.learning_rate = j.value("learning_rate", hp.learning_rate);
  hp.batch_size = j.value("batch_size", hp.batch_size);
  hp.beta1 = j.value("beta1", hp.beta1);
  hp.beta2 = j.value("beta2", hp.beta2);
  hp.eps_adam = j.value("eps_adam", hp.eps_adam);
  hp.max_epochs = j.value("max_epochs", hp.max_epochs);
  hp.patience = j.value("patience", hp.patience);
  hp.seed = j.value("seed", hp.seed);
  hp.clip_enabled = j.value("clip_enabled", hp.clip_enabled);
  hp.clip_norm = j.value("clip_norm", hp.clip_norm);
  return hp;
}

nlohmann::json TrainHistory::to_json() const {
  nlohmann::json j;
  j["train_loss"] = train_loss;
  j["val_loss"] = val_loss;
  j["val_accuracy"] = val_accuracy;
  j["best_epoch"] = best_epoch;
  return j;
}

TrainHistory TrainHistory::from_json(const nlohmann::json& j) {
  TrainHistory h;
  h.train_loss = j.value("train_loss", std::vector<double>{});
  h.val_loss = j.value("val_loss", std::vector<double>{});
  h.val_accuracy = j.value("val_accuracy", std::vector<double>{});
  h.best_epoch = j.value("best_epoch", size_t{0});
  return h;
}

template <typename T>
AdamState<T> AdamState<T>::init(const std::vector<nn::DiffTensor<T>*>& params) {
  AdamState<T> s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto* p : params) {
    s.m.emplace_back(p->shape());
    s.v.emplace_back(p->shape());
  }
  return s;
}

template <typename T>
void adam_step(const std::vector<nn::DiffTensor<T>*>& params, AdamState<T>& state,
               const HyperParams& hp) {
  if (params.size() != state.m.size() || params.size() != state.v.size())
    throw ShapeMismatch("adam state does not match parameter list");
  for (size_t i = 0; i < params.size(); ++i)
    if (!state.m[i].same_shape(params[i]->value()))
      throw ShapeMismatch("adam moment shape does not match parameter");

  double clip_scale = 1.0;
  if (hp.clip_enabled) {
    double sq = 0.0;
    for (const auto* p : params) {
      if (!p->has_grad()) continue;
      for (size_t j = 0; j < p->grad().size(); ++j) {
        const double g = p->grad()[j];
        sq += g * g;
      }
    }
    const double norm = std::sqrt(sq);
    if (norm > hp.clip_norm) clip_scale = hp.clip_norm / norm;
  }

  state.t += 1;
  const T lr = static_cast<T>(hp.learning_rate);
  const T b1 = static_cast<T>(hp.beta1);
  const T b2 = static_cast<T>(hp.beta2);
  const T eps = static_cast<T>(hp.eps_adam);
  const T bc1 = static_cast<T>(1.0 - std::pow(hp.beta1, static_cast<double>(state.t)));
  const T bc2 = static_cast<T>(1.0 - std::pow(hp.beta2, static_cast<double>(state.t)));

  for (size_t i = 0; i < params.size(); ++i) {
    nn::DiffTensor<T>& p = *params[i];
    nn::Tensor<T>& m = state.m[i];
    nn::Tensor<T>& v = state.v[i];
    const bool has_grad = p.has_grad();
    for (size_t j = 0; j < p.value().size(); ++j) {
      T g = has_grad ? p.grad()[j] : T{0};
      if (!std::isfinite(static_cast<double>(g)))
        throw NonFiniteGradient("non-finite gradient in optimizer step");
      g *= static_cast<T>(clip_scale);
      m[j] = b1 * m[j] + (T{1} - b1) * g;
      v[j] = b2 * v[j] + (T{1} - b2) * g * g;
      const T mhat = m[j] / bc1;
      const T vhat = v[j] / bc2;
      p.value()[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

namespace {

template <typename T>
nn::Tensor<T> collate(const data::EpochSet& set, const std::vector<size_t>& idx, size_t begin,
                      size_t end) {
  const size_t n = end - begin;
  nn::Tensor<T> batch({n, set.n_channels, set.epoch_len});
  for (size_t i = 0; i < n; ++i) {
    const data::Epoch& e = set.epochs[idx[begin + i]];
    T* dst = batch.data() + i * set.n_channels * set.epoch_len;
    for (size_t j = 0; j < e.samples.size(); ++j) dst[j] = static_cast<T>(e.samples[j]);
  }
  return batch;
}

std::vector<int> collate_labels(const data::EpochSet& set, const std::vector<size_t>& idx,
                                size_t begin, size_t end) {
  std::vector<int> labels(end - begin);
  for (size_t i = begin; i < end; ++i) labels[i - begin] = set.class_of(set.epochs[idx[i]]);
  return labels;
}

template <typename T>
void check_compatible(const model::SSNet<T>& m, const data::EpochSet& set, const char* which) {
  if (set.epochs.empty()) throw EmptyDataset(std::string(which) + " set is empty");
  if (set.n_channels != m.config().n_channels || set.epoch_len != m.config().epoch_len)
    throw ShapeMismatch(std::string(which) + " set geometry [" +
                        std::to_string(set.n_channels) + " x " + std::to_string(set.epoch_len) +
                        "] does not match model [" + std::to_string(m.config().n_channels) +
                        " x " + std::to_string(m.config().epoch_len) + "]");
  if (set.n_classes() != m.config().n_classes)
    throw ShapeMismatch(std::string(which) + " set has " + std::to_string(set.n_classes()) +
                        " classes, model expects " + std::to_string(m.config().n_classes));
}

// one fused loop shared by fresh runs and resumed runs
template <typename T>
TrainHistory train_loop(model::SSNet<T>& m, const data::EpochSet& train_set,
                        const data::EpochSet& val_set, const HyperParams& hp,
                        AdamState<T>& adam, TrainHistory history, size_t start_epoch,
                        std::vector<nn::Tensor<T>> best_state, double best_val_loss,
                        const std::string& checkpoint_path) {
  hp.validate();
  check_compatible(m, train_set, "train");
  check_compatible(m, val_set, "validation");
  DenormalFlushGuard ftz;

  const size_t n = train_set.size();
  auto params = m.parameters();

  for (size_t epoch = start_epoch; epoch < hp.max_epochs; ++epoch) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    CounterRng shuffle_rng(hp.seed, {0x5f5, epoch});
    shuffle_rng.shuffle(idx);

    double loss_sum = 0.0;
    size_t batch_no = 0;
    for (size_t begin = 0; begin < n; begin += hp.batch_size, ++batch_no) {
      const size_t end = std::min(begin + hp.batch_size, n);  // final short batch kept
      nn::DiffTensor<T> batch(collate<T>(train_set, idx, begin, end));
      const std::vector<int> labels = collate_labels(train_set, idx, begin, end);
      const uint64_t dropout_seed =
          splitmix64(hp.seed ^ splitmix64(0xd0 + epoch * 0x10000 + batch_no));

      for (auto* p : params) p->zero_grad();
      nn::DiffTensor<T> logits = m.forward(batch, nn::Mode::kTrain, dropout_seed);
      nn::DiffTensor<T> loss = nn::softmax_cross_entropy(logits, labels);
      const double batch_loss = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(batch_loss)) throw DivergedLoss("non-finite training loss");
      loss_sum += batch_loss * static_cast<double>(end - begin);
      nn::backward(loss);
      adam_step(params, adam, hp);
    }
    history.train_loss.push_back(loss_sum / static_cast<double>(n));

    const EvalResult val = evaluate(m, val_set, hp.batch_size);
    history.val_loss.push_back(val.loss);
    history.val_accuracy.push_back(val.accuracy);

    if (best_state.empty() || val.loss < best_val_loss) {
      best_val_loss = val.loss;
      history.best_epoch = epoch;
      best_state = m.state_snapshot();
    }

    if (!checkpoint_path.empty())
      checkpoint_save(checkpoint_path, m, adam, history, hp, epoch + 1, best_state,
                      best_val_loss);

    if (should_stop(epoch, history.best_epoch, hp.patience)) break;
  }

  if (!best_state.empty()) m.restore_state(best_state);
  return history;
}

}  // namespace

template <typename T>
EvalResult evaluate(model::SSNet<T>& m, const data::EpochSet& set, size_t batch_size) {
  check_compatible(m, set, "eval");
  DenormalFlushGuard ftz;
  nn::NoGradGuard guard;
  EvalResult out;
  const size_t n = set.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  double loss_sum = 0.0;
  size_t correct = 0;
  for (size_t begin = 0; begin < n; begin += batch_size) {
    const size_t end = std::min(begin + batch_size, n);
    nn::DiffTensor<T> batch(collate<T>(set, idx, begin, end));
    const std::vector<int> labels = collate_labels(set, idx, begin, end);
    nn::DiffTensor<T> logits = m.forward(batch, nn::Mode::kEval);
    nn::DiffTensor<T> loss = nn::softmax_cross_entropy(logits, labels);
    loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(end - begin);
    const auto& lv = logits.value();
    for (size_t i = 0; i < end - begin; ++i) {
      int best = 0;
      for (size_t c = 1; c < set.n_classes(); ++c)
        if (lv.at(i, c) > lv.at(i, static_cast<size_t>(best))) best = static_cast<int>(c);
      out.predictions.push_back(best);
      out.labels.push_back(labels[i]);
      if (best == labels[i]) ++correct;
    }
  }
  out.loss = loss_sum / static_cast<double>(n);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return out;
}

template <typename T>
TrainHistory train(model::SSNet<T>& m, const data::EpochSet& train_set,
                   const data::EpochSet& val_set, const HyperParams& hp,
                   const std::string& checkpoint_path) {
  AdamState<T> adam = AdamState<T>::init(m.parameters());
  return train_loop(m, train_set, val_set, hp, adam, TrainHistory{}, 0, {}, 0.0,
                    checkpoint_path);
}

template <typename T>
void checkpoint_save(const std::string& path, model::SSNet<T>& m, const AdamState<T>& adam,
                     const TrainHistory& history, const HyperParams& hp, size_t next_epoch,
                     const std::vector<nn::Tensor<T>>& best_state, double best_val_loss) {
  io::TensorBlobWriter blob;
  for (auto& [name, t] : m.named_state()) blob.add(name, *t);
  const auto named = m.named_parameters();
  for (size_t i = 0; i < named.size(); ++i) {
    blob.add("adam.m." + named[i].first, adam.m[i]);
    blob.add("adam.v." + named[i].first, adam.v[i]);
  }
  const auto state_names = m.named_state();
  for (size_t i = 0; i < best_state.size(); ++i)
    blob.add("best." + state_names[i].first, best_state[i]);

  nlohmann::json meta;
  meta["kind"] = "ssnet-checkpoint";
  meta["model"] = m.manifest();
  meta["hyperparams"] = hp.to_json();
  meta["history"] = history.to_json();
  meta["next_epoch"] = next_epoch;
  meta["adam_t"] = adam.t;
  meta["best_val_loss"] = best_val_loss;
  meta["has_best"] = !best_state.empty();
  meta["tensors"] = blob.index();
  io::write_container(path, std::move(meta), blob.blob());
}

template <typename T>
Checkpoint<T> checkpoint_load(const std::string& path) {
  io::Container c = io::read_container(path);
  if (c.meta.value("kind", "") != "ssnet-checkpoint")
    throw SchemaVersionMismatch("not a checkpoint file: " + path);
  const nlohmann::json& model_meta = c.meta.at("model");

  Checkpoint<T> ck{model::SSNet<T>::build(
                       model::SSNetConfig::from_json(model_meta.at("config")),
                       model_meta.value("init_seed", uint64_t{0})),
                   {},
                   TrainHistory::from_json(c.meta.at("history")),
                   HyperParams::from_json(c.meta.at("hyperparams")),
                   c.meta.value("next_epoch", size_t{0}),
                   {},
                   c.meta.value("best_val_loss", 0.0)};

  io::TensorBlobReader reader(c.meta.at("tensors"), c.blob);
  for (auto& [name, t] : ck.model.named_state()) *t = reader.get<T>(name);
  ck.adam = AdamState<T>::init(ck.model.parameters());
  ck.adam.t = c.meta.value("adam_t", int64_t{0});
  const auto named = ck.model.named_parameters();
  for (size_t i = 0; i < named.size(); ++i) {
    ck.adam.m[i] = reader.get<T>("adam.m." + named[i].first);
    ck.adam.v[i] = reader.get<T>("adam.v." + named[i].first);
  }
  if (c.meta.value("has_best", false)) {
    for (auto& [name, t] : ck.model.named_state())
      ck.best_state.push_back(reader.get<T>("best." + name));
  }
  return ck;
}

template <typename T>
TrainHistory train_resume(Checkpoint<T>& ck, const data::EpochSet& train_set,
                          const data::EpochSet& val_set, const std::string& checkpoint_path) {
  return train_loop(ck.model, train_set, val_set, ck.hp, ck.adam, ck.history, ck.next_epoch,
                    ck.best_state, ck.best_val_loss, checkpoint_path);
}

#define SSNET_INSTANTIATE_TRAINER(T)                                                       \
  template struct AdamState<T>;                                                            \
  template void adam_step<T>(const std::vector<nn::DiffTensor<T>*>&, AdamState<T>&,        \
                             const HyperParams&);                                          \
  template EvalResult evaluate<T>(model::SSNet<T>&, const data::EpochSet&, size_t);        \
  template TrainHistory train<T>(model::SSNet<T>&, const data::EpochSet&,                  \
                                 const data::EpochSet&, const HyperParams&,                \
                                 const std::string&);                                      \
  template void checkpoint_save<T>(const std::string&, model::SSNet<T>&,                   \
                                   const AdamState<T>&, const TrainHistory&,               \
                                   const HyperParams&, size_t,                             \
                                   const std::vector<nn::Tensor<T>>&, double);             \
  template Checkpoint<T> checkpoint_load<T>(const std::string&);                           \
  template TrainHistory train_resume<T>(Checkpoint<T>&, const data::EpochSet&,             \
                                        const data::EpochSet&, const std::string&);

SSNET_INSTANTIATE_TRAINER(float)
SSNET_INSTANTIATE_TRAINER(double)

#undef SSNET_INSTANTIATE_TRAINER

}  // namespace ssnet::train
