#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ssnet/gradcheck.hpp"
#include "ssnet/metrics.hpp"
#include "ssnet/shards.hpp"
#include "ssnet/trainer.hpp"

namespace py = pybind11;
using namespace ssnet;

namespace {

data::Stage stage_arg(const std::string& name) { return data::stage_from_string(name); }

py::array_t<float> set_samples(const data::EpochSet& set) {
  py::array_t<float> out({set.size(), set.n_channels, set.epoch_len});
  auto buf = out.mutable_unchecked<3>();
  for (size_t i = 0; i < set.size(); ++i)
    for (size_t c = 0; c < set.n_channels; ++c)
      for (size_t l = 0; l < set.epoch_len; ++l)
        buf(i, c, l) = set.epochs[i].samples[c * set.epoch_len + l];
  return out;
}

py::array_t<int32_t> set_labels(const data::EpochSet& set) {
  py::array_t<int32_t> out(py::array::ShapeContainer{static_cast<py::ssize_t>(set.size())});
  auto buf = out.mutable_unchecked<1>();
  for (size_t i = 0; i < set.size(); ++i)
    buf(static_cast<py::ssize_t>(i)) = set.class_of(set.epochs[i]);
  return out;
}

data::EpochSet make_epoch_set(py::array_t<float, py::array::c_style | py::array::forcecast> samples,
                              const std::vector<std::string>& stages, double sample_rate_hz,
                              const std::string& scheme) {
  if (samples.ndim() != 3) throw ShapeMismatch("samples must be [n x channels x len]");
  const auto n = static_cast<size_t>(samples.shape(0));
  if (stages.size() != n) throw ShapeMismatch("stage list length != sample count");
  data::EpochSet set;
  set.n_channels = static_cast<size_t>(samples.shape(1));
  set.epoch_len = static_cast<size_t>(samples.shape(2));
  set.sample_rate_hz = sample_rate_hz;
  for (size_t c = 0; c < set.n_channels; ++c)
    set.channel_names.push_back("ch" + std::to_string(c));
  set.recording_ids = {"python"};
  set.scheme = data::LabelScheme::from_name(scheme);
  auto buf = samples.unchecked<3>();
  for (size_t i = 0; i < n; ++i) {
    data::Epoch e;
    e.stage = stage_arg(stages[i]);
    e.rec = 0;
    e.index = static_cast<uint32_t>(i);
    e.samples.resize(set.n_channels * set.epoch_len);
    for (size_t c = 0; c < set.n_channels; ++c)
      for (size_t l = 0; l < set.epoch_len; ++l)
        e.samples[c * set.epoch_len + l] = buf(i, c, l);
    set.epochs.push_back(std::move(e));
  }
  return set;
}

nn::TensorF batch_tensor(py::array_t<float, py::array::c_style | py::array::forcecast> batch) {
  if (batch.ndim() != 3) throw ShapeMismatch("batch must be [n x channels x len]");
  nn::TensorF x({static_cast<size_t>(batch.shape(0)), static_cast<size_t>(batch.shape(1)),
                 static_cast<size_t>(batch.shape(2))});
  std::memcpy(x.data(), batch.data(), sizeof(float) * x.size());
  return x;
}

py::array_t<double> matrix_array(const nn::Tensor<double>& t) {
  py::array_t<double> out({t.shape()[0], t.shape()[1]});
  std::memcpy(out.mutable_data(), t.data(), sizeof(double) * t.size());
  return out;
}

py::dict history_dict(const train::TrainHistory& h) {
  py::dict d;
  d["train_loss"] = h.train_loss;
  d["val_loss"] = h.val_loss;
  d["val_accuracy"] = h.val_accuracy;
  d["best_epoch"] = h.best_epoch;
  return d;
}

py::dict row_dict(const metrics::MetricsRow& r) {
  py::dict d;
  d["class"] = r.class_name;
  d["accuracy"] = r.accuracy;
  d["sensitivity"] = r.sensitivity;
  d["specificity"] = r.specificity;
  d["precision"] = r.precision;
  d["f1"] = r.f1;
  d["kappa"] = r.kappa;
  d["degenerate"] = r.degenerate;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "SSNet sleep-stage classification core";

  py::register_exception<UsageError>(m, "UsageError");
  py::register_exception<DataError>(m, "DataError");
  py::register_exception<NumericError>(m, "NumericError");

  // ---- signal io ----
  py::class_<edf::ChannelSpec>(m, "ChannelSpec")
      .def_readonly("label", &edf::ChannelSpec::label)
      .def_readonly("physical_dim", &edf::ChannelSpec::physical_dim)
      .def_readonly("physical_min", &edf::ChannelSpec::physical_min)
      .def_readonly("physical_max", &edf::ChannelSpec::physical_max)
      .def_readonly("digital_min", &edf::ChannelSpec::digital_min)
      .def_readonly("digital_max", &edf::ChannelSpec::digital_max)
      .def_readonly("samples_per_record", &edf::ChannelSpec::samples_per_record)
      .def_readonly("sample_rate_hz", &edf::ChannelSpec::sample_rate_hz);

  py::class_<edf::MultiChannelRecord>(m, "Recording")
      .def_property_readonly("recording_id",
                             [](const edf::MultiChannelRecord& r) { return r.header.recording_id; })
      .def_property_readonly("patient_id",
                             [](const edf::MultiChannelRecord& r) { return r.header.patient_id; })
      .def_property_readonly("n_signals",
                             [](const edf::MultiChannelRecord& r) { return r.header.n_signals; })
      .def_property_readonly("channel_labels",
                             [](const edf::MultiChannelRecord& r) {
                               std::vector<std::string> labels;
                               for (const auto& c : r.channels) labels.push_back(c.spec.label);
                               return labels;
                             })
      .def("spec",
           [](const edf::MultiChannelRecord& r, size_t i) { return r.channels.at(i).spec; })
      .def("samples", [](const edf::MultiChannelRecord& r, size_t i) {
        const auto& s = r.channels.at(i).samples;
        py::array_t<float> out(py::array::ShapeContainer{static_cast<py::ssize_t>(s.size())});
        std::memcpy(out.mutable_data(), s.data(), sizeof(float) * s.size());
        return out;
      });

  m.def("parse_edf", [](py::bytes b) {
    const std::string s = b;
    return edf::parse_edf({reinterpret_cast<const uint8_t*>(s.data()), s.size()});
  });
  m.def("parse_edf_file",
        [](const std::string& path) { return edf::parse_edf(edf::read_file(path)); });
  m.def("write_edf", [](const edf::MultiChannelRecord& r) {
    const auto bytes = edf::write_edf(r);
    return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  });
  m.def("select_channels", &edf::select_channels);
  m.def("parse_hypnogram", [](py::bytes b, const std::string& format) {
    const std::string s = b;
    const auto fmt = format == "isruc_epoch_list" ? edf::HypnogramFormat::isruc_epoch_list
                                                  : edf::HypnogramFormat::edfplus_annotations;
    const auto ann = edf::parse_hypnogram({reinterpret_cast<const uint8_t*>(s.data()), s.size()}, fmt);
    py::list out;
    for (const auto& e : ann.entries)
      out.append(py::make_tuple(e.onset_s, e.duration_s, edf::to_string(e.stage)));
    return out;
  });

  // ---- dataset pipeline ----
  py::class_<data::EpochSet>(m, "EpochSet")
      .def_property_readonly("n_channels", [](const data::EpochSet& s) { return s.n_channels; })
      .def_property_readonly("epoch_len", [](const data::EpochSet& s) { return s.epoch_len; })
      .def_property_readonly("sample_rate_hz",
                             [](const data::EpochSet& s) { return s.sample_rate_hz; })
      .def_property_readonly("scheme", [](const data::EpochSet& s) { return s.scheme.name(); })
      .def_property_readonly("class_names",
                             [](const data::EpochSet& s) { return s.scheme.class_names(); })
      .def_property_readonly("normalized", [](const data::EpochSet& s) { return s.normalized; })
      .def("__len__", &data::EpochSet::size)
      .def("samples", &set_samples)
      .def("labels", &set_labels)
      .def("stages",
           [](const data::EpochSet& s) {
             std::vector<std::string> out;
             for (const auto& e : s.epochs) out.push_back(data::to_string(e.stage));
             return out;
           })
      .def("class_counts", [](const data::EpochSet& s) { return s.class_counts(); })
      .def("provenance", [](const data::EpochSet& s) {
        py::list out;
        for (const auto& e : s.epochs)
          out.append(py::make_tuple(s.recording_ids[e.rec], e.index));
        return out;
      });

  m.def("make_epoch_set", &make_epoch_set, py::arg("samples"), py::arg("stages"),
        py::arg("sample_rate_hz"), py::arg("scheme") = "five");
  m.def("epoch_recording", &data::epoch_recording);
  m.def("zscore", [](const data::EpochSet& s) { return data::zscore_all(s); });
  m.def("undersample",
        [](const data::EpochSet& s, const std::map<std::string, size_t>& targets, uint64_t seed) {
          std::map<data::Stage, size_t> t;
          for (const auto& [name, count] : targets) t[stage_arg(name)] = count;
          return data::undersample(s, t, seed);
        },
        py::arg("set"), py::arg("targets"), py::arg("seed"));
  m.def("undersample_preset", [](const std::string& name) {
    std::map<std::string, size_t> out;
    for (const auto& [stage, count] : data::undersample_preset(name))
      out[data::to_string(stage)] = count;
    return out;
  });
  m.def("split",
        [](const data::EpochSet& s, double train_frac, double val_frac, double test_frac,
           uint64_t seed, bool stratified) {
          data::SplitSpec spec{train_frac, val_frac, test_frac, seed, stratified};
          auto parts = data::split(s, spec);
          return py::make_tuple(std::move(parts.train), std::move(parts.val),
                                std::move(parts.test));
        },
        py::arg("set"), py::arg("train_frac") = 0.70, py::arg("val_frac") = 0.15,
        py::arg("test_frac") = 0.15, py::arg("seed") = 0, py::arg("stratified") = true);
  m.def("map_labels", [](const data::EpochSet& s, const std::string& scheme) {
    return data::map_labels(s, data::LabelScheme::from_name(scheme));
  });
  m.def("generate_synthetic",
        [](const std::vector<std::string>& stages, size_t n_per_class, size_t n_channels,
           double sample_rate_hz, double noise_sigma, uint64_t seed) {
          std::vector<data::SynthStageProfile> profiles;
          for (const auto& s : stages)
            profiles.push_back(data::profile_for_stage(stage_arg(s), noise_sigma));
          return data::generate_synthetic(profiles, n_per_class, n_channels, sample_rate_hz, seed);
        },
        py::arg("stages"), py::arg("n_per_class"), py::arg("n_channels") = 2,
        py::arg("sample_rate_hz") = 100.0, py::arg("noise_sigma") = 0.1, py::arg("seed") = 0);
  m.def("export_shards",
        [](const data::EpochSet& s, const std::string& dir, size_t epochs_per_shard) {
          return data::export_shards(s, dir, epochs_per_shard).dump();
        },
        py::arg("set"), py::arg("dir"), py::arg("epochs_per_shard") = 4096);
  m.def("import_shards", &data::import_shards);

  // ---- model ----
  py::class_<model::SSNetConfig>(m, "SSNetConfig")
      .def(py::init([](size_t n_channels, size_t epoch_len, size_t n_classes,
                       std::vector<size_t> cnn_maps, std::vector<size_t> cnn_kernels,
                       std::vector<size_t> lstm_sizes, double dropout,
                       double recurrent_dropout) {
             model::SSNetConfig cfg;
             cfg.n_channels = n_channels;
             cfg.epoch_len = epoch_len;
             cfg.n_classes = n_classes;
             if (!cnn_maps.empty()) cfg.cnn_maps = std::move(cnn_maps);
             if (!cnn_kernels.empty()) cfg.cnn_kernels = std::move(cnn_kernels);
             if (!lstm_sizes.empty()) cfg.lstm_sizes = std::move(lstm_sizes);
             cfg.dropout = dropout;
             cfg.recurrent_dropout = recurrent_dropout;
             cfg.validate();
             return cfg;
           }),
           py::arg("n_channels") = 4, py::arg("epoch_len") = 3000, py::arg("n_classes") = 5,
           py::arg("cnn_maps") = std::vector<size_t>{}, py::arg("cnn_kernels") = std::vector<size_t>{},
           py::arg("lstm_sizes") = std::vector<size_t>{}, py::arg("dropout") = 0.02,
           py::arg("recurrent_dropout") = 0.02)
      .def_property_readonly("shape_chain", &model::SSNetConfig::shape_chain)
      .def_property_readonly("flat_width", &model::SSNetConfig::flat_width)
      .def_property_readonly("concat_width", &model::SSNetConfig::concat_width)
      .def_readonly("n_channels", &model::SSNetConfig::n_channels)
      .def_readonly("epoch_len", &model::SSNetConfig::epoch_len)
      .def_readonly("n_classes", &model::SSNetConfig::n_classes);

  py::class_<model::SSNetF>(m, "SSNet")
      .def_static("build", &model::SSNetF::build, py::arg("config"), py::arg("init_seed") = 0)
      .def_static("load", &model::SSNetF::load)
      .def("save", &model::SSNetF::save)
      .def_property_readonly("config", &model::SSNetF::config)
      .def_property_readonly("param_count", &model::SSNetF::param_count)
      .def("manifest", [](const model::SSNetF& m_) { return m_.manifest().dump(); })
      .def("forward",
           [](model::SSNetF& m_, py::array_t<float, py::array::c_style | py::array::forcecast> x) {
             nn::NoGradGuard guard;
             const auto logits = m_.forward(nn::DiffTensorF(batch_tensor(x)), nn::Mode::kEval);
             py::array_t<float> out({logits.shape()[0], logits.shape()[1]});
             std::memcpy(out.mutable_data(), logits.value().data(),
                         sizeof(float) * logits.size());
             return out;
           })
      .def("predict",
           [](model::SSNetF& m_, py::array_t<float, py::array::c_style | py::array::forcecast> x) {
             const model::Prediction pred = m_.predict(batch_tensor(x));
             py::array_t<int> classes(py::array::ShapeContainer{static_cast<py::ssize_t>(pred.classes.size())});
             std::memcpy(classes.mutable_data(), pred.classes.data(),
                         sizeof(int) * pred.classes.size());
             return py::make_tuple(classes, matrix_array(pred.probabilities));
           });

  // ---- trainer ----
  py::class_<train::HyperParams>(m, "HyperParams")
      .def(py::init([](double learning_rate, size_t batch_size, size_t max_epochs,
                       size_t patience, uint64_t seed) {
             train::HyperParams hp;
             hp.learning_rate = learning_rate;
             hp.batch_size = batch_size;
             hp.max_epochs = max_epochs;
             hp.patience = patience;
             hp.seed = seed;
             hp.validate();
             return hp;
           }),
           py::arg("learning_rate") = 0.002, py::arg("batch_size") = 128,
           py::arg("max_epochs") = 50, py::arg("patience") = 10, py::arg("seed") = 0)
      .def_readonly("learning_rate", &train::HyperParams::learning_rate)
      .def_readonly("batch_size", &train::HyperParams::batch_size);

  m.def("train",
        [](model::SSNetF& m_, const data::EpochSet& train_set, const data::EpochSet& val_set,
           const train::HyperParams& hp, const std::string& checkpoint_path) {
          return history_dict(train::train(m_, train_set, val_set, hp, checkpoint_path));
        },
        py::arg("model"), py::arg("train_set"), py::arg("val_set"), py::arg("hyper"),
        py::arg("checkpoint_path") = "");
  m.def("evaluate",
        [](model::SSNetF& m_, const data::EpochSet& set, size_t batch_size) {
          const train::EvalResult r = train::evaluate(m_, set, batch_size);
          py::dict d;
          d["loss"] = r.loss;
          d["accuracy"] = r.accuracy;
          d["predictions"] = r.predictions;
          d["labels"] = r.labels;
          return d;
        },
        py::arg("model"), py::arg("set"), py::arg("batch_size") = 128);

  // ---- metrics ----
  m.def("confusion",
        [](const std::vector<int>& preds, const std::vector<int>& labels, size_t n_classes,
           std::vector<std::string> names) {
          const auto cm = metrics::confusion(preds, labels, n_classes, std::move(names));
          py::array_t<uint64_t> grid({cm.n_classes, cm.n_classes});
          std::memcpy(grid.mutable_data(), cm.counts.data(),
                      sizeof(uint64_t) * cm.counts.size());
          return grid;
        },
        py::arg("predictions"), py::arg("labels"), py::arg("n_classes"),
        py::arg("class_names") = std::vector<std::string>{});
  m.def("classification_report",
        [](const std::vector<int>& preds, const std::vector<int>& labels, size_t n_classes,
           std::vector<std::string> names) {
          const auto cm = metrics::confusion(preds, labels, n_classes, std::move(names));
          auto rows = metrics::per_class_metrics(cm);
          rows.push_back(metrics::macro_average(rows));
          py::list out;
          for (const auto& r : rows) out.append(row_dict(r));
          py::dict d;
          d["rows"] = out;
          d["kappa_multiclass"] = metrics::multiclass_kappa(cm);
          if (cm.n_classes == 5) {
            const auto rem = metrics::rem_detection_summary(cm);
            d["rem_precision"] = rem.precision;
            d["rem_recall"] = rem.recall;
          }
          return d;
        },
        py::arg("predictions"), py::arg("labels"), py::arg("n_classes"),
        py::arg("class_names") = std::vector<std::string>{});

  // ---- verification ----
  m.def("run_gradchecks",
        [](size_t seeds) {
          py::list out;
          for (const auto& r : nn::run_layer_gradchecks(seeds)) {
            py::dict d;
            d["layer"] = r.layer;
            d["max_rel_err"] = r.max_rel_err;
            d["tolerance"] = r.tolerance;
            d["pass"] = r.pass;
            out.append(d);
          }
          return out;
        },
        py::arg("seeds") = 20);
}
