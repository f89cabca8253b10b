#include "ssnet/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "ssnet/metrics.hpp"
#include "ssnet/serialize.hpp"
#include "ssnet/shards.hpp"

namespace ssnet::cli {

namespace fs = std::filesystem;

ExperimentConfig ExperimentConfig::from_json(nlohmann::json j) {
  ExperimentConfig cfg;
  cfg.raw = j;
  if (j.contains("inputs")) {
    const nlohmann::json& in = j.at("inputs");
    cfg.shards_input = in.value("shards", "");
    if (in.contains("recordings")) {
      for (const nlohmann::json& r : in.at("recordings")) {
        RecordingInput ri;
        ri.edf_path = r.at("edf").get<std::string>();
        ri.hypnogram_path = r.at("hypnogram").get<std::string>();
        const std::string f = r.value("format", "edfplus_annotations");
        if (f == "edfplus_annotations")
          ri.format = edf::HypnogramFormat::edfplus_annotations;
        else if (f == "isruc_epoch_list")
          ri.format = edf::HypnogramFormat::isruc_epoch_list;
        else
          throw UsageError("unknown hypnogram format '" + f + "'");
        cfg.recordings.push_back(std::move(ri));
      }
    }
    cfg.channels = in.value("channels", std::vector<std::string>{});
    if (!cfg.shards_input.empty() && !cfg.recordings.empty())
      throw UsageError("config must not give both shards and recordings inputs");
  }
  cfg.scheme = data::LabelScheme::from_name(j.value("scheme", "five"));
  cfg.normalize = j.value("normalize", true);
  if (j.contains("undersample")) {
    const nlohmann::json& u = j.at("undersample");
    const std::string preset = u.value("preset", "");
    if (!preset.empty() && preset != "none") {
      cfg.undersample_preset = preset;
      cfg.undersample_targets = data::undersample_preset(preset);
    } else if (u.contains("targets")) {
      std::map<data::Stage, size_t> targets;
      for (const auto& [name, count] : u.at("targets").items())
        targets[data::stage_from_string(name)] = count.get<size_t>();
      cfg.undersample_targets = std::move(targets);
    }
  }
  if (j.contains("split")) {
    const nlohmann::json& s = j.at("split");
    cfg.split.train_frac = s.value("train_frac", cfg.split.train_frac);
    cfg.split.val_frac = s.value("val_frac", cfg.split.val_frac);
    cfg.split.test_frac = s.value("test_frac", cfg.split.test_frac);
    cfg.split.stratified = s.value("stratified", cfg.split.stratified);
    const std::string unit = s.value("unit", "epoch");
    if (unit == "recording") cfg.split.unit = data::SplitSpec::Unit::recording;
    else if (unit != "epoch") throw UsageError("split unit must be epoch or recording");
  }
  cfg.model_overrides = j.value("model", nlohmann::json::object());
  if (j.contains("hyper")) cfg.hyper = train::HyperParams::from_json(j.at("hyper"));
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  if (j.contains("seeds")) {
    const nlohmann::json& s = j.at("seeds");
    cfg.seed_data = s.value("data", cfg.seed_data);
    cfg.seed_init = s.value("init", cfg.seed_init);
    cfg.seed_train = s.value("train", cfg.seed_train);
  }
  cfg.precision = j.value("precision", cfg.precision);
  if (cfg.precision != "f32" && cfg.precision != "f64")
    throw UsageError("precision must be f32 or f64");
  cfg.epochs_per_shard = j.value("epochs_per_shard", cfg.epochs_per_shard);
  cfg.split.seed = cfg.seed_data;
  cfg.hyper.seed = cfg.seed_train;
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path, const nlohmann::json& overrides) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("invalid config JSON in " + path + ": " + e.what());
  }
  j.merge_patch(overrides);  // flags win
  return from_json(std::move(j));
}

std::string ExperimentConfig::config_hash() const {
  const std::string dump = raw.dump();
  return io::sha256_hex({reinterpret_cast<const uint8_t*>(dump.data()), dump.size()});
}

nlohmann::json ExperimentConfig::provenance() const {
  nlohmann::json j;
  j["config_sha256"] = config_hash();
  j["seeds"] = {{"data", seed_data}, {"init", seed_init}, {"train", seed_train}};
  return j;
}

// ---- inspect -----------------------------------------------------------------

nlohmann::json inspect_inventory(const std::string& edf_path) {
  const edf::MultiChannelRecord rec = edf::parse_edf(edf::read_file(edf_path));
  nlohmann::json j;
  j["file"] = fs::path(edf_path).filename().string();
  const edf::RecordingHeader& h = rec.header;
  char dt[32];
  std::snprintf(dt, sizeof(dt), "%04d-%02d-%02d %02d:%02d:%02d", h.start_datetime.year,
                h.start_datetime.month, h.start_datetime.day, h.start_datetime.hour,
                h.start_datetime.minute, h.start_datetime.second);
  j["header"] = {{"version", h.version_tag},
                 {"patient_id", h.patient_id},
                 {"recording_id", h.recording_id},
                 {"start", dt},
                 {"n_data_records", h.n_data_records},
                 {"record_duration_s", h.record_duration_s},
                 {"n_signals", h.n_signals},
                 {"discontinuous", h.discontinuous}};
  nlohmann::json channels = nlohmann::json::array();
  for (const edf::Channel& c : rec.channels) {
    channels.push_back({{"label", c.spec.label},
                        {"physical_dim", c.spec.physical_dim},
                        {"physical_min", c.spec.physical_min},
                        {"physical_max", c.spec.physical_max},
                        {"digital_min", c.spec.digital_min},
                        {"digital_max", c.spec.digital_max},
                        {"samples_per_record", c.spec.samples_per_record},
                        {"sample_rate_hz", c.spec.sample_rate_hz},
                        {"n_samples", c.samples.size()}});
  }
  j["channels"] = channels;
  return j;
}

void cmd_inspect(const std::string& edf_path, const std::string& format, std::ostream& out) {
  const nlohmann::json inv = inspect_inventory(edf_path);
  if (inv["header"]["discontinuous"].get<bool>())
    std::cerr << "warning: EDF+D discontinuous recording; treating as contiguous\n";
  if (format == "json") {
    out << inv.dump(2) << "\n";
  } else {
    out << "file: " << inv["file"].get<std::string>() << "\n";
    const nlohmann::json& h = inv["header"];
    out << "recording: " << h["recording_id"].get<std::string>() << "  start "
        << h["start"].get<std::string>() << "  records " << h["n_data_records"] << " x "
        << h["record_duration_s"] << "s\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-20s %-8s %10s %10s %8s %8s\n", "label", "dim", "phys_min",
                  "phys_max", "rate_hz", "samples");
    out << buf;
    for (const nlohmann::json& c : inv["channels"]) {
      std::snprintf(buf, sizeof(buf), "%-20s %-8s %10.4g %10.4g %8.4g %8zu\n",
                    c["label"].get<std::string>().c_str(),
                    c["physical_dim"].get<std::string>().c_str(), c["physical_min"].get<double>(),
                    c["physical_max"].get<double>(), c["sample_rate_hz"].get<double>(),
                    c["n_samples"].get<size_t>());
      out << buf;
    }
  }
}

// ---- prepare -----------------------------------------------------------------

namespace {

data::EpochSet merge_sets(std::vector<data::EpochSet> sets) {
  if (sets.empty()) throw EmptyDataset("no recordings produced epochs");
  data::EpochSet merged = std::move(sets.front());
  for (size_t i = 1; i < sets.size(); ++i) {
    data::EpochSet& s = sets[i];
    if (s.n_channels != merged.n_channels || s.epoch_len != merged.epoch_len ||
        s.sample_rate_hz != merged.sample_rate_hz)
      throw ShapeMismatch("recordings disagree in channel count, epoch length or sample rate");
    const auto rec_offset = static_cast<uint32_t>(merged.recording_ids.size());
    merged.recording_ids.insert(merged.recording_ids.end(), s.recording_ids.begin(),
                                s.recording_ids.end());
    for (data::Epoch& e : s.epochs) {
      e.rec += rec_offset;
      merged.epochs.push_back(std::move(e));
    }
  }
  return merged;
}

data::EpochSet load_input_set(const ExperimentConfig& cfg) {
  if (!cfg.shards_input.empty()) return data::import_shards(cfg.shards_input);
  if (cfg.recordings.empty())
    throw UsageError("config needs inputs.shards or inputs.recordings");
  std::vector<data::EpochSet> sets;
  for (const RecordingInput& ri : cfg.recordings) {
    edf::MultiChannelRecord rec = edf::parse_edf(edf::read_file(ri.edf_path));
    if (rec.header.discontinuous)
      std::cerr << "warning: " << ri.edf_path << " is EDF+D; treating as contiguous\n";
    if (!cfg.channels.empty()) rec = edf::select_channels(rec, cfg.channels);
    const edf::StageAnnotations ann =
        edf::parse_hypnogram(edf::read_file(ri.hypnogram_path), ri.format);
    sets.push_back(data::epoch_recording(rec, ann));
  }
  return merge_sets(std::move(sets));
}

void log_counts(std::ostream& log, const char* name, const data::EpochSet& set) {
  log << name << ": " << set.size() << " epochs [";
  const auto names = set.scheme.class_names();
  const auto counts = set.class_counts();
  for (size_t c = 0; c < names.size(); ++c)
    log << (c ? " " : "") << names[c] << "=" << counts[c];
  log << "]\n";
}

}  // namespace

void cmd_prepare(const ExperimentConfig& cfg, std::ostream& log) {
  data::EpochSet set = load_input_set(cfg);
  log_counts(log, "loaded", set);

  if (cfg.normalize) set = data::zscore_all(std::move(set));
  if (cfg.undersample_targets) {
    set = data::undersample(set, *cfg.undersample_targets, cfg.seed_data);
    log_counts(log, "undersampled", set);
  }
  set = data::map_labels(set, cfg.scheme);

  const data::SplitResult splits = data::split(set, cfg.split);
  nlohmann::json extra = cfg.provenance();
  if (!cfg.recordings.empty()) {
    // provenance: which PSG/label file pairs fed this dataset
    nlohmann::json sources = nlohmann::json::array();
    for (const RecordingInput& ri : cfg.recordings)
      sources.push_back({{"edf", ri.edf_path}, {"hypnogram", ri.hypnogram_path}});
    extra["source_recordings"] = sources;
  }
  for (const auto& [name, part] :
       {std::pair<const char*, const data::EpochSet*>{"train", &splits.train},
        {"val", &splits.val},
        {"test", &splits.test}}) {
    extra["split"] = name;
    data::export_shards(*part, (fs::path(cfg.out_dir) / name).string(), cfg.epochs_per_shard,
                        extra);
    log_counts(log, name, *part);
  }
}

// ---- synth ---------------------------------------------------------------------

void cmd_synth(const SynthArgs& args, std::ostream& log) {
  if (args.out_dir.empty()) throw UsageError("synth needs an output directory");
  std::vector<data::SynthStageProfile> profiles;
  for (data::Stage s : args.stages)
    profiles.push_back(data::profile_for_stage(s, args.noise_sigma));
  data::EpochSet set = data::generate_synthetic(profiles, args.n_per_class, args.n_channels,
                                                args.sample_rate_hz, args.seed);
  set = data::map_labels(set, args.scheme);
  nlohmann::json extra;
  extra["seeds"] = {{"data", args.seed}};
  extra["synth"] = {{"n_per_class", args.n_per_class},
                    {"noise_sigma", args.noise_sigma},
                    {"sample_rate_hz", args.sample_rate_hz}};
  data::export_shards(set, args.out_dir, 4096, extra);
  log_counts(log, "synth", set);
}

// ---- train ---------------------------------------------------------------------

namespace {

model::SSNetConfig model_config_for(const ExperimentConfig& cfg, const data::EpochSet& train_set) {
  nlohmann::json j = cfg.model_overrides;
  j["n_channels"] = train_set.n_channels;
  j["epoch_len"] = train_set.epoch_len;
  j["n_classes"] = train_set.n_classes();
  return model::SSNetConfig::from_json(j);
}

template <typename T>
void run_training(const ExperimentConfig& cfg, const data::EpochSet& train_set,
                  const data::EpochSet& val_set, const std::string& resume_path,
                  std::ostream& log) {
  fs::create_directories(cfg.out_dir);
  const std::string last_ckpt = (fs::path(cfg.out_dir) / "last.ckpt").string();
  train::TrainHistory history;
  model::SSNet<T> m = model::SSNet<T>::build(model_config_for(cfg, train_set), cfg.seed_init);
  if (!resume_path.empty()) {
    train::Checkpoint<T> ck = train::checkpoint_load<T>(resume_path);
    ck.hp = cfg.hyper;  // flags may extend max_epochs on resume
    history = train::train_resume(ck, train_set, val_set, last_ckpt);
    m = std::move(ck.model);
  } else {
    history = train::train(m, train_set, val_set, cfg.hyper, last_ckpt);
  }

  m.save((fs::path(cfg.out_dir) / "model.ckpt").string());
  nlohmann::json j = history.to_json();
  j["provenance"] = cfg.provenance();
  j["model"] = m.manifest();
  std::ofstream out(fs::path(cfg.out_dir) / "history.json");
  out << j.dump(2) << "\n";

  log << "trained " << history.epochs_completed() << " epochs; best epoch "
      << history.best_epoch << " val_loss " << history.val_loss[history.best_epoch]
      << " val_acc " << history.val_accuracy[history.best_epoch] << "\n";
  log << "model: " << (fs::path(cfg.out_dir) / "model.ckpt").string() << "\n";
}

}  // namespace

void cmd_train(const ExperimentConfig& cfg, const std::string& resume_path, std::ostream& log) {
  const std::string base = cfg.shards_input.empty() ? cfg.out_dir : cfg.shards_input;
  const data::EpochSet train_set = data::import_shards((fs::path(base) / "train").string());
  const data::EpochSet val_set = data::import_shards((fs::path(base) / "val").string());
  if (cfg.precision == "f64")
    run_training<double>(cfg, train_set, val_set, resume_path, log);
  else
    run_training<float>(cfg, train_set, val_set, resume_path, log);
}

// ---- eval ----------------------------------------------------------------------

namespace {

template <typename T>
train::EvalResult eval_model(const std::string& model_path, const data::EpochSet& test_set) {
  const io::Container c = io::read_container(model_path);
  const std::string kind = c.meta.value("kind", "");
  if (kind == "ssnet-model") {
    model::SSNet<T> m = model::SSNet<T>::load(model_path);
    return train::evaluate(m, test_set, 128);
  }
  if (kind == "ssnet-checkpoint") {
    train::Checkpoint<T> ck = train::checkpoint_load<T>(model_path);
    if (!ck.best_state.empty()) ck.model.restore_state(ck.best_state);
    return train::evaluate(ck.model, test_set, 128);
  }
  throw SchemaVersionMismatch("not a model or checkpoint file: " + model_path);
}

std::string model_dtype(const std::string& model_path) {
  const io::Container c = io::read_container(model_path);
  return c.meta.at("model").value("dtype", "f32");
}

}  // namespace

void cmd_eval(const std::string& model_path, const std::string& shards_path,
              const std::string& out_dir, std::ostream& log) {
  const data::EpochSet test_set = data::import_shards(shards_path);
  const train::EvalResult result = model_dtype(model_path) == "f64"
                                       ? eval_model<double>(model_path, test_set)
                                       : eval_model<float>(model_path, test_set);

  const metrics::ConfusionMatrix cm = metrics::confusion(
      result.predictions, result.labels, test_set.n_classes(), test_set.scheme.class_names());
  std::vector<metrics::MetricsRow> rows = metrics::per_class_metrics(cm);
  rows.push_back(metrics::macro_average(rows));

  fs::create_directories(out_dir);
  std::ofstream(fs::path(out_dir) / "confusion.csv") << metrics::confusion_csv(cm);
  std::ofstream(fs::path(out_dir) / "metrics.csv")
      << metrics::render_report(cm, rows, metrics::ReportFormat::csv);
  nlohmann::json j =
      nlohmann::json::parse(metrics::render_report(cm, rows, metrics::ReportFormat::json));
  const nlohmann::json manifest = data::read_manifest(shards_path);
  if (manifest.contains("config_sha256")) j["config_sha256"] = manifest["config_sha256"];
  if (manifest.contains("seeds")) j["seeds"] = manifest["seeds"];
  j["overall_accuracy"] = 100.0 * result.accuracy;
  if (cm.n_classes == 5) {
    const metrics::RemSummary rem = metrics::rem_detection_summary(cm);
    j["rem_detection"] = {
        {"precision", rem.precision}, {"recall", rem.recall}, {"degenerate", rem.degenerate}};
  }
  std::ofstream(fs::path(out_dir) / "metrics.json") << j.dump(2) << "\n";

  log << metrics::render_report(cm, rows, metrics::ReportFormat::table);
  log << "overall accuracy " << 100.0 * result.accuracy << "%\n";
  log << "reports: " << out_dir << "/{confusion.csv,metrics.csv,metrics.json}\n";
}

// ---- gradcheck -----------------------------------------------------------------

int cmd_gradcheck(size_t seeds, bool perturb_selftest, std::ostream& out) {
  const double saved_scale = nn::testhook::relu_grad_scale;
  if (perturb_selftest) nn::testhook::relu_grad_scale = 1.001;
  std::vector<nn::LayerCheckResult> results = nn::run_layer_gradchecks(seeds);
  nn::testhook::relu_grad_scale = saved_scale;

  bool all_pass = true;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-24s %8s %14s %10s %s\n", "layer", "seeds", "max_rel_err",
                "tolerance", "result");
  out << buf;
  for (const nn::LayerCheckResult& r : results) {
    all_pass = all_pass && r.pass;
    std::snprintf(buf, sizeof(buf), "%-24s %8zu %14.3e %10.0e %s\n", r.layer.c_str(), r.seeds,
                  r.max_rel_err, r.tolerance, r.pass ? "pass" : "FAIL");
    out << buf;
  }
  if (perturb_selftest) {
    out << (all_pass ? "self-test FAILED: perturbed backward went undetected\n"
                     : "self-test ok: perturbed backward detected\n");
    return all_pass ? 3 : 0;
  }
  return all_pass ? 0 : 3;
}

// ---- report --------------------------------------------------------------------

void cmd_report(const std::string& metrics_json_path, const std::string& format,
                std::ostream& out) {
  std::ifstream in(metrics_json_path);
  if (!in) throw DataError("cannot open metrics file: " + metrics_json_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid metrics JSON: ") + e.what());
  }
  metrics::ConfusionMatrix cm;
  cm.class_names = j.at("classes").get<std::vector<std::string>>();
  cm.n_classes = cm.class_names.size();
  for (const nlohmann::json& row : j.at("confusion"))
    for (const nlohmann::json& cell : row) cm.counts.push_back(cell.get<uint64_t>());
  std::vector<metrics::MetricsRow> rows;
  for (const nlohmann::json& r : j.at("rows")) {
    metrics::MetricsRow row;
    row.class_name = r.at("class").get<std::string>();
    row.accuracy = r.at("accuracy").get<double>();
    row.sensitivity = r.at("sensitivity").get<double>();
    row.specificity = r.at("specificity").get<double>();
    row.precision = r.at("precision").get<double>();
    row.f1 = r.at("f1").get<double>();
    row.kappa = r.at("kappa").get<double>();
    row.degenerate = r.value("degenerate", false);
    rows.push_back(std::move(row));
  }
  metrics::ReportFormat fmt = metrics::ReportFormat::table;
  if (format == "csv") fmt = metrics::ReportFormat::csv;
  else if (format == "json") fmt = metrics::ReportFormat::json;
  else if (format != "table") throw UsageError("unknown report format '" + format + "'");
  out << metrics::render_report(cm, rows, fmt);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return 1;
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  if (dynamic_cast<const DataError*>(&e)) return 2;
  return 2;
}

}  // namespace ssnet::cli
