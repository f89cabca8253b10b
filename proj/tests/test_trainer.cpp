#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ssnet/trainer.hpp"
#include "testutil.hpp"

using namespace ssnet;
using namespace ssnet::train;
using nn::DiffTensorD;
using nn::TensorD;

namespace {

// small 2-block topology so 30-sample epochs (1 Hz) are valid
model::SSNetConfig mini_config(size_t n_channels, size_t n_classes) {
  model::SSNetConfig cfg;
  cfg.n_channels = n_channels;
  cfg.epoch_len = 30;
  cfg.n_classes = n_classes;
  cfg.cnn_maps = {4, 3};
  cfg.cnn_kernels = {3, 3};
  cfg.lstm_sizes = {6, 4};
  return cfg;
}

// separable 3-class data at 1 Hz; bands scaled into the 0..0.5 Hz range
data::EpochSet mini_synth(size_t n_per_class, uint64_t seed) {
  using data::Band;
  using data::Stage;
  using data::SynthStageProfile;
  std::vector<SynthStageProfile> profiles = {
      {Stage::W, {Band{0.30, 0.40, 1.0}}, 0.05},
      {Stage::N3, {Band{0.02, 0.10, 1.0}}, 0.05},
      {Stage::REM, {Band{0.15, 0.25, 1.0}}, 0.05},
  };
  auto set = data::generate_synthetic(profiles, n_per_class, 2, 1.0, seed);
  return data::map_labels(data::zscore_all(std::move(set)), data::LabelScheme::three());
}

}  // namespace

TEST_CASE("adam_step recurrence") {
  HyperParams hp;  // lr 0.002, beta 0.9/0.999, eps 1e-8

  SUBCASE("zero gradients leave fresh parameters unchanged") {
    auto p = DiffTensorD::param(TensorD({3}, {1.0, -2.0, 0.5}));
    p.grad_ref().fill(0.0);
    auto state = AdamState<double>::init({&p});
    adam_step({&p}, state, hp);
    CHECK(p.value().vec() == TensorD::Storage{1.0, -2.0, 0.5});
    CHECK(state.t == 1);
  }
  SUBCASE("first step moves a scalar by about -lr") {
    auto p = DiffTensorD::param(TensorD({1}, {0.0}));
    p.grad_ref()[0] = 1.0;
    auto state = AdamState<double>::init({&p});
    adam_step({&p}, state, hp);
    // bias correction makes the first update -lr * g/(|g| + eps)
    CHECK(p.value()[0] == doctest::Approx(-0.002).epsilon(1e-6));
  }
  SUBCASE("two constant-gradient steps reduce f(p)=p^2 monotonically") {
    auto p = DiffTensorD::param(TensorD({1}, {1.0}));
    auto state = AdamState<double>::init({&p});
    double prev_loss = p.value()[0] * p.value()[0];
    for (int i = 0; i < 2; ++i) {
      p.grad_ref()[0] = 2.0 * p.value()[0];
      adam_step({&p}, state, hp);
      const double loss = p.value()[0] * p.value()[0];
      CHECK(loss < prev_loss);
      prev_loss = loss;
    }
  }
  SUBCASE("quadratic (p-3)^2 converges from 0 within 5000 steps at lr 0.002") {
    auto p = DiffTensorD::param(TensorD({1}, {0.0}));
    auto state = AdamState<double>::init({&p});
    for (int i = 0; i < 5000; ++i) {
      p.grad_ref()[0] = 2.0 * (p.value()[0] - 3.0);
      adam_step({&p}, state, hp);
    }
    CHECK(std::fabs(p.value()[0] - 3.0) < 0.01);
  }
  SUBCASE("non-finite gradient") {
    auto p = DiffTensorD::param(TensorD({1}, {0.0}));
    p.grad_ref()[0] = std::numeric_limits<double>::infinity();
    auto state = AdamState<double>::init({&p});
    CHECK_THROWS_AS(adam_step({&p}, state, hp), NonFiniteGradient);
  }
  SUBCASE("global-norm clip caps the effective gradient") {
    auto p = DiffTensorD::param(TensorD({2}, {0.0, 0.0}));
    p.grad_ref()[0] = 300.0;
    p.grad_ref()[1] = 400.0;  // norm 500
    auto state = AdamState<double>::init({&p});
    HyperParams clip = hp;
    clip.clip_enabled = true;
    clip.clip_norm = 5.0;
    adam_step({&p}, state, clip);
    // clipped gradient is (3, 4); adam first step is still about -lr each
    CHECK(state.m[0][0] == doctest::Approx(0.1 * 3.0));
    CHECK(state.m[0][1] == doctest::Approx(0.1 * 4.0));
  }
}

TEST_CASE("early-stop rule: patience 2 stops after three evaluations past the best") {
  size_t stopped_at = 0;
  for (size_t epoch = 1; epoch < 100; ++epoch)
    if (should_stop(epoch, 0, 2)) {
      stopped_at = epoch;
      break;
    }
  CHECK(stopped_at == 3);  // epochs 1,2,3 evaluated past best epoch 0
  CHECK_FALSE(should_stop(2, 0, 2));
  CHECK(should_stop(11, 0, 10));
}

TEST_CASE("training is deterministic and selects the best-validation model") {
  const auto pool = mini_synth(40, 21);
  data::SplitSpec spec;
  spec.seed = 5;
  const auto parts = data::split(pool, spec);

  HyperParams hp;
  hp.batch_size = 16;
  hp.max_epochs = 4;
  hp.seed = 99;

  auto m1 = model::SSNet<double>::build(mini_config(2, 3), 17);
  auto m2 = model::SSNet<double>::build(mini_config(2, 3), 17);
  const TrainHistory h1 = train::train(m1, parts.train, parts.val, hp);
  const TrainHistory h2 = train::train(m2, parts.train, parts.val, hp);

  CHECK(h1.train_loss == h2.train_loss);
  CHECK(h1.val_loss == h2.val_loss);
  CHECK(h1.val_accuracy == h2.val_accuracy);
  CHECK(h1.epochs_completed() == 4);

  // model selection: recorded best equals the minimum validation loss
  double best = h1.val_loss[0];
  for (double v : h1.val_loss) best = std::min(best, v);
  CHECK(h1.val_loss[h1.best_epoch] == best);

  // the returned parameters are the best-epoch snapshot: re-evaluating
  // reproduces the recorded best validation loss
  const EvalResult ev = evaluate(m1, parts.val, hp.batch_size);
  CHECK(ev.loss == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("empty datasets and geometry mismatches are rejected") {
  auto m = model::SSNet<double>::build(mini_config(2, 3), 1);
  const auto pool = mini_synth(10, 3);
  data::EpochSet empty = pool;
  empty.epochs.clear();
  HyperParams hp;
  hp.max_epochs = 1;
  CHECK_THROWS_AS(train::train(m, empty, pool, hp), EmptyDataset);
  CHECK_THROWS_AS(train::train(m, pool, empty, hp), EmptyDataset);

  auto wrong = model::SSNet<double>::build(mini_config(3, 3), 1);
  CHECK_THROWS_AS(train::train(wrong, pool, pool, hp), ShapeMismatch);

  auto wrong_k = model::SSNet<double>::build(mini_config(2, 5), 1);
  CHECK_THROWS_AS(train::train(wrong_k, pool, pool, hp), ShapeMismatch);
}

TEST_CASE("diverged loss raises a numeric error") {
  const auto pool = mini_synth(20, 9);
  data::SplitSpec spec;
  spec.seed = 1;
  const auto parts = data::split(pool, spec);
  // float32 so the blown-up conv activations genuinely overflow
  auto m = model::SSNet<float>::build(mini_config(2, 3), 2);
  HyperParams hp;
  hp.learning_rate = 1e18;
  hp.max_epochs = 50;
  hp.batch_size = 8;
  CHECK_THROWS_AS(train::train(m, parts.train, parts.val, hp), NumericError);
}

TEST_CASE("checkpoint round trip and split-run resume oracle") {
  namespace fs = std::filesystem;
  const auto pool = mini_synth(40, 33);
  data::SplitSpec spec;
  spec.seed = 8;
  const auto parts = data::split(pool, spec);
  const auto dir = fs::temp_directory_path() / "ssnet_trainer_test";
  fs::create_directories(dir);
  const std::string ckpt = (dir / "last.ckpt").string();

  HyperParams hp;
  hp.batch_size = 16;
  hp.seed = 4242;

  SUBCASE("save/load restores parameters and moments bitwise") {
    auto m = model::SSNet<double>::build(mini_config(2, 3), 5);
    hp.max_epochs = 2;
    train::train(m, parts.train, parts.val, hp, ckpt);
    auto ck = checkpoint_load<double>(ckpt);
    CHECK(ck.next_epoch == 2);
    CHECK(ck.hp.batch_size == 16);
    CHECK(ck.history.epochs_completed() == 2);
    CHECK(ck.adam.t > 0);
    // loaded model state matches the checkpointed (last-epoch) state
    auto ck2 = checkpoint_load<double>(ckpt);
    auto a = ck.model.named_state();
    auto b = ck2.model.named_state();
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].second->vec() == b[i].second->vec());
  }
  SUBCASE("resumed run equals the uninterrupted run bitwise at 64-bit") {
    auto full = model::SSNet<double>::build(mini_config(2, 3), 5);
    HyperParams hp3 = hp;
    hp3.max_epochs = 3;
    const TrainHistory href = train::train(full, parts.train, parts.val, hp3);

    auto part = model::SSNet<double>::build(mini_config(2, 3), 5);
    HyperParams hp2 = hp;
    hp2.max_epochs = 2;
    train::train(part, parts.train, parts.val, hp2, ckpt);

    auto ck = checkpoint_load<double>(ckpt);
    ck.hp.max_epochs = 3;
    const TrainHistory hres = train_resume(ck, parts.train, parts.val);

    REQUIRE(hres.epochs_completed() == 3);
    CHECK(hres.train_loss == href.train_loss);
    CHECK(hres.val_loss == href.val_loss);
    CHECK(hres.val_accuracy == href.val_accuracy);
  }
  SUBCASE("corrupted checkpoint fails the checksum") {
    auto m = model::SSNet<double>::build(mini_config(2, 3), 5);
    hp.max_epochs = 1;
    train::train(m, parts.train, parts.val, hp, ckpt);
    auto bytes = edf::read_file(ckpt);
    bytes[bytes.size() - 5] ^= 0xff;
    edf::write_file(ckpt, bytes);
    CHECK_THROWS_AS(checkpoint_load<double>(ckpt), ChecksumMismatch);
  }
  fs::remove_all(dir);
}

TEST_CASE("overfit sanity: 64 epochs to train loss < 0.01 within 200 epochs") {
  const auto pool = mini_synth(22, 55);  // 66 epochs, near the spec's 64
  data::EpochSet small = pool;
  small.epochs.resize(64);
  HyperParams hp;
  hp.batch_size = 16;
  hp.max_epochs = 200;
  hp.patience = 200;
  hp.seed = 3;
  auto m = model::SSNet<double>::build(mini_config(2, 3), 6);
  const TrainHistory h = train::train(m, small, small, hp);
  double best = h.train_loss[0];
  for (double v : h.train_loss) best = std::min(best, v);
  INFO("best train loss ", best, " after ", h.epochs_completed(), " epochs");
  CHECK(best < 0.01);
}
