#include "ssnet/model.hpp"

#include <cmath>

#include "ssnet/rng.hpp"
#include "ssnet/serialize.hpp"

namespace ssnet::model {

void SSNetConfig::validate() const {
  if (n_channels < 1) throw InvalidConfig("n_channels must be >= 1");
  if (n_classes < 2) throw InvalidConfig("n_classes must be >= 2");
  if (cnn_maps.empty() || cnn_maps.size() != cnn_kernels.size())
    throw InvalidConfig("cnn_maps and cnn_kernels must be non-empty and equal length");
  for (size_t m : cnn_maps)
    if (m < 1) throw InvalidConfig("feature map counts must be >= 1");
  for (size_t k : cnn_kernels)
    if (k < 1) throw InvalidConfig("kernel sizes must be >= 1");
  if (pool < 1) throw InvalidConfig("pool must be >= 1");
  if (lstm_sizes.size() != 2 || lstm_sizes[0] < 1 || lstm_sizes[1] < 1)
    throw InvalidConfig("lstm_sizes must hold two positive sizes");
  if (dropout < 0.0 || dropout >= 1.0) throw InvalidConfig("dropout must be in [0, 1)");
  if (recurrent_dropout < 0.0 || recurrent_dropout >= 1.0)
    throw InvalidConfig("recurrent_dropout must be in [0, 1)");
  size_t min_len = 1;
  for (size_t i = 0; i < cnn_maps.size(); ++i) min_len *= pool;
  if (epoch_len < min_len)
    throw InvalidConfig("epoch_len " + std::to_string(epoch_len) + " < " +
                        std::to_string(min_len) + " required by " +
                        std::to_string(cnn_maps.size()) + " pool-by-" + std::to_string(pool) +
                        " stages");
}

std::vector<size_t> SSNetConfig::shape_chain() const {
  std::vector<size_t> chain;
  size_t len = epoch_len;
  for (size_t i = 0; i < cnn_maps.size(); ++i) {
    len /= pool;  // floor division; forced by the published flat width of 120
    chain.push_back(len);
  }
  return chain;
}

size_t SSNetConfig::flat_width() const { return cnn_maps.back() * shape_chain().back(); }

size_t SSNetConfig::concat_width() const { return flat_width() + lstm_sizes.back(); }

bool SSNetConfig::is_default_topology() const {
  const SSNetConfig def;
  return cnn_maps == def.cnn_maps && cnn_kernels == def.cnn_kernels && pool == def.pool &&
         lstm_sizes == def.lstm_sizes && dropout == def.dropout &&
         recurrent_dropout == def.recurrent_dropout;
}

nlohmann::json SSNetConfig::to_json() const {
  nlohmann::json j;
  j["n_channels"] = n_channels;
  j["epoch_len"] = epoch_len;
  j["n_classes"] = n_classes;
  j["cnn_maps"] = cnn_maps;
  j["cnn_kernels"] = cnn_kernels;
  j["pool"] = pool;
  j["dropout"] = dropout;
  j["lstm_sizes"] = lstm_sizes;
  j["recurrent_dropout"] = recurrent_dropout;
  return j;
}

SSNetConfig SSNetConfig::from_json(const nlohmann::json& j) {
  SSNetConfig c;
  c.n_channels = j.value("n_channels", c.n_channels);
  c.epoch_len = j.value("epoch_len", c.epoch_len);
  c.n_classes = j.value("n_classes", c.n_classes);
  c.cnn_maps = j.value("cnn_maps", c.cnn_maps);
  c.cnn_kernels = j.value("cnn_kernels", c.cnn_kernels);
  c.pool = j.value("pool", c.pool);
  c.dropout = j.value("dropout", c.dropout);
  c.lstm_sizes = j.value("lstm_sizes", c.lstm_sizes);
  c.recurrent_dropout = j.value("recurrent_dropout", c.recurrent_dropout);
  return c;
}

namespace {

uint64_t derive_seed(uint64_t seed, uint64_t tag) { return splitmix64(seed ^ splitmix64(tag)); }

template <typename T>
Tensor<T> glorot_uniform(nn::Shape shape, size_t fan_in, size_t fan_out, CounterRng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.next_uniform(-limit, limit));
  return t;
}

template <typename T>
nn::LSTMParams<T> init_lstm(size_t hidden, size_t input, CounterRng rng) {
  auto p = nn::LSTMParams<T>::zeros(hidden, input);
  const size_t fan_in = hidden + input;
  size_t tag = 0;
  for (auto* w : {&p.w_forget, &p.w_input, &p.w_candidate, &p.w_output}) {
    CounterRng sub = rng.split(tag++);
    *w = DiffTensor<T>::param(glorot_uniform<T>({hidden, hidden + input}, fan_in, hidden, sub));
  }
  // forget-gate bias offset +1 aids early gradient flow
  p.b_forget.value().fill(T{1});
  return p;
}

}  // namespace

template <typename T>
SSNet<T> SSNet<T>::build(const SSNetConfig& config, uint64_t init_seed) {
  config.validate();
  SSNet<T> m;
  m.config_ = config;
  m.init_seed_ = init_seed;

  size_t in_ch = config.n_channels;
  for (size_t i = 0; i < config.cnn_maps.size(); ++i) {
    const size_t out_ch = config.cnn_maps[i];
    const size_t k = config.cnn_kernels[i];
    CounterRng rng(init_seed, {1, i});
    nn::ConvParams<T> p;
    p.weights = DiffTensor<T>::param(
        glorot_uniform<T>({out_ch, in_ch, k}, in_ch * k, out_ch * k, rng));
    p.bias = DiffTensor<T>::param(Tensor<T>({out_ch}));
    m.conv_.push_back(std::move(p));
    in_ch = out_ch;
  }

  m.lstm1_ = init_lstm<T>(config.lstm_sizes[0], config.n_channels, CounterRng(init_seed, {2}));
  m.bn_ = nn::BatchNormParams<T>::identity(config.lstm_sizes[0]);
  m.lstm2_ = init_lstm<T>(config.lstm_sizes[1], config.lstm_sizes[0], CounterRng(init_seed, {3}));

  CounterRng rng_fc(init_seed, {4});
  const size_t concat = config.concat_width();
  m.fc_w_ = DiffTensor<T>::param(
      glorot_uniform<T>({concat, config.n_classes}, concat, config.n_classes, rng_fc));
  m.fc_b_ = DiffTensor<T>::param(Tensor<T>({config.n_classes}));
  return m;
}

namespace {

// [batch x ch x len] -> [batch x len x ch] so the recurrent branch sees the
// epoch as len time steps of ch-dimensional inputs
template <typename T>
DiffTensor<T> transpose_to_sequence(const DiffTensor<T>& x) {
  const size_t batch = x.shape()[0], ch = x.shape()[1], len = x.shape()[2];
  Tensor<T> out({batch, len, ch});
  for (size_t b = 0; b < batch; ++b)
    for (size_t c = 0; c < ch; ++c) {
      const T* src = x.value().data() + (b * ch + c) * len;
      T* dst = out.data() + b * len * ch + c;
      for (size_t l = 0; l < len; ++l) dst[l * ch] = src[l];
    }
  DiffTensor<T> y(std::move(out));
  if (nn::grad_enabled() && x.requires_grad()) {
    auto xi = x.impl();
    y.attach_node({xi},
                  [xi, batch, ch, len](typename DiffTensor<T>::Impl& node) {
                    if (!xi->requires_grad) return;
                    Tensor<T> g(xi->value.shape());
                    for (size_t b = 0; b < batch; ++b)
                      for (size_t c = 0; c < ch; ++c) {
                        T* dst = g.data() + (b * ch + c) * len;
                        const T* src = node.grad.data() + b * len * ch + c;
                        for (size_t l = 0; l < len; ++l) dst[l] = src[l * ch];
                      }
                    xi->accumulate(std::move(g));
                  },
                  "transpose_to_sequence");
  }
  return y;
}

}  // namespace

template <typename T>
std::pair<DiffTensor<T>, DiffTensor<T>> SSNet<T>::branch_features(const DiffTensor<T>& batch,
                                                                  Mode mode,
                                                                  uint64_t dropout_seed) {
  if (batch.shape().size() != 3 || batch.shape()[1] != config_.n_channels ||
      batch.shape()[2] != config_.epoch_len)
    throw ShapeMismatch("forward: batch " + nn::shape_str(batch.shape()) + " does not match [n x " +
                        std::to_string(config_.n_channels) + " x " +
                        std::to_string(config_.epoch_len) + "]");
  const size_t n = batch.shape()[0];

  DiffTensor<T> h = batch;
  for (size_t i = 0; i < conv_.size(); ++i) {
    h = nn::relu(nn::conv1d(h, conv_[i]));
    h = nn::maxpool1d(h, config_.pool, config_.pool);
    h = nn::dropout(h, config_.dropout, mode, derive_seed(dropout_seed, 10 + i));
  }
  DiffTensor<T> cnn_feat = nn::reshape(h, {n, config_.flat_width()});

  DiffTensor<T> seq = transpose_to_sequence(batch);
  DiffTensor<T> r = nn::lstm_sequence(seq, lstm1_, config_.recurrent_dropout, mode,
                                      derive_seed(dropout_seed, 20));
  r = nn::batchnorm(r, bn_, mode);
  r = nn::reshape(r, {n, size_t{1}, config_.lstm_sizes[0]});
  DiffTensor<T> lstm_feat = nn::lstm_sequence(r, lstm2_, config_.recurrent_dropout, mode,
                                              derive_seed(dropout_seed, 21));
  return {std::move(cnn_feat), std::move(lstm_feat)};
}

template <typename T>
DiffTensor<T> SSNet<T>::classify(const DiffTensor<T>& cnn_feat, const DiffTensor<T>& lstm_feat) {
  return nn::dense(nn::concat_cols(cnn_feat, lstm_feat), fc_w_, fc_b_);
}

template <typename T>
DiffTensor<T> SSNet<T>::forward(const DiffTensor<T>& batch, Mode mode, uint64_t dropout_seed) {
  auto [cnn_feat, lstm_feat] = branch_features(batch, mode, dropout_seed);
  return classify(cnn_feat, lstm_feat);
}

template <typename T>
Prediction SSNet<T>::predict(const Tensor<T>& batch) {
  nn::NoGradGuard guard;
  DiffTensor<T> logits = forward(DiffTensor<T>(batch), Mode::kEval);
  const Tensor<T> probs = nn::softmax(logits.value());
  Prediction out;
  out.probabilities = probs.template cast<double>();
  const size_t n = probs.shape()[0], k = probs.shape()[1];
  out.classes.resize(n);
  for (size_t b = 0; b < n; ++b) {
    int best = 0;
    for (size_t c = 1; c < k; ++c)
      if (probs.at(b, c) > probs.at(b, static_cast<size_t>(best))) best = static_cast<int>(c);
    out.classes[b] = best;
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, DiffTensor<T>*>> SSNet<T>::named_parameters() {
  std::vector<std::pair<std::string, DiffTensor<T>*>> out;
  for (size_t i = 0; i < conv_.size(); ++i) {
    const std::string base = "conv" + std::to_string(i + 1);
    out.emplace_back(base + ".weights", &conv_[i].weights);
    out.emplace_back(base + ".bias", &conv_[i].bias);
  }
  auto add_lstm = [&out](const std::string& base, nn::LSTMParams<T>& p) {
    out.emplace_back(base + ".w_forget", &p.w_forget);
    out.emplace_back(base + ".w_input", &p.w_input);
    out.emplace_back(base + ".w_candidate", &p.w_candidate);
    out.emplace_back(base + ".w_output", &p.w_output);
    out.emplace_back(base + ".b_forget", &p.b_forget);
    out.emplace_back(base + ".b_input", &p.b_input);
    out.emplace_back(base + ".b_candidate", &p.b_candidate);
    out.emplace_back(base + ".b_output", &p.b_output);
  };
  add_lstm("lstm1", lstm1_);
  out.emplace_back("bn1.gamma", &bn_.gamma);
  out.emplace_back("bn1.beta", &bn_.beta);
  add_lstm("lstm2", lstm2_);
  out.emplace_back("fc.weights", &fc_w_);
  out.emplace_back("fc.bias", &fc_b_);
  return out;
}

template <typename T>
std::vector<DiffTensor<T>*> SSNet<T>::parameters() {
  std::vector<DiffTensor<T>*> out;
  for (auto& [name, p] : named_parameters()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> SSNet<T>::named_state() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (auto& [name, p] : named_parameters()) out.emplace_back(name, &p->value());
  out.emplace_back("bn1.running_mean", &bn_.running_mean);
  out.emplace_back("bn1.running_var", &bn_.running_var);
  return out;
}

template <typename T>
std::vector<ParamInfo> SSNet<T>::param_summary() const {
  std::vector<ParamInfo> out;
  auto& self = const_cast<SSNet<T>&>(*this);
  for (auto& [name, p] : self.named_parameters())
    out.push_back({name, p->shape(), p->size()});
  return out;
}

template <typename T>
size_t SSNet<T>::param_count() const {
  size_t total = 0;
  for (const ParamInfo& p : param_summary()) total += p.count;
  return total;
}

template <typename T>
std::vector<Tensor<T>> SSNet<T>::state_snapshot() const {
  auto& self = const_cast<SSNet<T>&>(*this);
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : self.named_state()) out.push_back(*t);
  return out;
}

template <typename T>
void SSNet<T>::restore_state(const std::vector<Tensor<T>>& snapshot) {
  auto state = named_state();
  if (snapshot.size() != state.size()) throw ShapeMismatch("state snapshot size mismatch");
  for (size_t i = 0; i < state.size(); ++i) {
    if (!state[i].second->same_shape(snapshot[i]))
      throw ShapeMismatch("state tensor shape mismatch: " + state[i].first);
    *state[i].second = snapshot[i];
  }
}

template <typename T>
nlohmann::json SSNet<T>::manifest() const {
  auto& self = const_cast<SSNet<T>&>(*this);
  io::TensorBlobWriter blob;
  for (auto& [name, t] : self.named_state()) blob.add(name, *t);
  nlohmann::json j;
  j["config"] = config_.to_json();
  j["default_topology"] = config_.is_default_topology();
  j["shape_chain"] = config_.shape_chain();
  j["flat_width"] = config_.flat_width();
  j["concat_width"] = config_.concat_width();
  j["param_count"] = param_count();
  j["init_seed"] = init_seed_;
  j["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
  j["weights_sha256"] = io::sha256_hex(blob.blob());
  return j;
}

template <typename T>
void SSNet<T>::save(const std::string& path) const {
  auto& self = const_cast<SSNet<T>&>(*this);
  io::TensorBlobWriter blob;
  for (auto& [name, t] : self.named_state()) blob.add(name, *t);
  nlohmann::json meta;
  meta["kind"] = "ssnet-model";
  meta["model"] = manifest();
  meta["tensors"] = blob.index();
  io::write_container(path, std::move(meta), blob.blob());
}

template <typename T>
SSNet<T> SSNet<T>::load(const std::string& path) {
  io::Container c = io::read_container(path);
  const nlohmann::json& model_meta = c.meta.at("model");
  SSNet<T> m = build(SSNetConfig::from_json(model_meta.at("config")),
                     model_meta.value("init_seed", uint64_t{0}));
  io::TensorBlobReader reader(c.meta.at("tensors"), c.blob);
  for (auto& [name, t] : m.named_state()) *t = reader.get<T>(name);
  return m;
}

template class SSNet<float>;
template class SSNet<double>;

}  // namespace ssnet::model
