#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssnet/dataset.hpp"
#include "ssnet/gradcheck.hpp"
#include "ssnet/model.hpp"
#include "ssnet/trainer.hpp"

namespace ssnet::cli {

struct RecordingInput {
  std::string edf_path;
  std::string hypnogram_path;
  edf::HypnogramFormat format = edf::HypnogramFormat::edfplus_annotations;
};

// Encodes one experiment: inputs, preparation, model, training and seeds.
// Loaded from a JSON file; CLI flags are merged in before parsing, so the
// config hash always reflects the effective configuration.
struct ExperimentConfig {
  nlohmann::json raw;

  std::string shards_input;  // mutually exclusive with recordings
  std::vector<RecordingInput> recordings;
  std::vector<std::string> channels;

  data::LabelScheme scheme;
  bool normalize = true;
  std::string undersample_preset;  // "sleep-edfx" | "isruc" | "" (none)
  std::optional<std::map<data::Stage, size_t>> undersample_targets;
  data::SplitSpec split;
  nlohmann::json model_overrides = nlohmann::json::object();
  train::HyperParams hyper;
  std::string out_dir = "out";
  uint64_t seed_data = 1, seed_init = 2, seed_train = 3;
  std::string precision = "f32";  // f32 | f64
  size_t epochs_per_shard = 4096;

  static ExperimentConfig from_json(nlohmann::json j);
  static ExperimentConfig load(const std::string& path, const nlohmann::json& overrides);
  std::string config_hash() const;
  nlohmann::json provenance() const;  // config hash + seeds, embedded in outputs
};

nlohmann::json inspect_inventory(const std::string& edf_path);
void cmd_inspect(const std::string& edf_path, const std::string& format, std::ostream& out);

void cmd_prepare(const ExperimentConfig& cfg, std::ostream& log);

struct SynthArgs {
  std::vector<data::Stage> stages = {data::Stage::W, data::Stage::N1, data::Stage::N2,
                                     data::Stage::N3, data::Stage::REM};
  size_t n_per_class = 100;
  size_t n_channels = 2;
  double sample_rate_hz = 100.0;
  double noise_sigma = 0.1;
  uint64_t seed = 1;
  data::LabelScheme scheme;
  std::string out_dir;
};
void cmd_synth(const SynthArgs& args, std::ostream& log);

void cmd_train(const ExperimentConfig& cfg, const std::string& resume_path, std::ostream& log);

void cmd_eval(const std::string& model_path, const std::string& shards_path,
              const std::string& out_dir, std::ostream& log);

// Returns 0 when every layer passes its tolerance.
int cmd_gradcheck(size_t seeds, bool perturb_selftest, std::ostream& out);

void cmd_report(const std::string& metrics_json_path, const std::string& format,
                std::ostream& out);

// exit codes: 0 success, 1 usage, 2 data, 3 numeric/divergence
int exit_code_for(const std::exception& e);

}  // namespace ssnet::cli
