#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ssnet/edf.hpp"
#include "ssnet/errors.hpp"

namespace ssnet::data {

// canonical AASM stages; class indices come from the LabelScheme
enum class Stage : uint8_t { W = 0, N1, N2, N3, REM };
constexpr size_t kNumStages = 5;

const char* to_string(Stage s);
Stage stage_from_string(const std::string& name);

struct LabelScheme {
  enum class Variant { three_class, five_class };
  Variant variant = Variant::five_class;

  static LabelScheme three() { return {Variant::three_class}; }
  static LabelScheme five() { return {Variant::five_class}; }
  static LabelScheme from_name(const std::string& name);

  // three_class: W -> 0, {N1,N2,N3} -> 1 (NREM), REM -> 2; five_class: identity
  int class_of(Stage s) const;
  size_t n_classes() const { return variant == Variant::three_class ? 3 : 5; }
  std::vector<std::string> class_names() const;
  const char* name() const {
    return variant == Variant::three_class ? "three_class" : "five_class";
  }
  bool operator==(const LabelScheme&) const = default;
};

struct Epoch {
  std::vector<float> samples;  // [n_channels x epoch_len] row-major
  Stage stage = Stage::W;
  uint32_t rec = 0;    // index into EpochSet::recording_ids
  uint32_t index = 0;  // 30-s window index within the recording
};

struct EpochSet {
  size_t n_channels = 0;
  size_t epoch_len = 0;
  double sample_rate_hz = 0.0;
  std::vector<std::string> channel_names;
  std::vector<std::string> recording_ids;
  LabelScheme scheme;
  bool normalized = false;
  std::vector<Epoch> epochs;

  size_t size() const { return epochs.size(); }
  size_t n_classes() const { return scheme.n_classes(); }
  int class_of(const Epoch& e) const { return scheme.class_of(e.stage); }
  std::vector<size_t> class_counts() const;
  std::array<size_t, kNumStages> stage_counts() const;
  std::string provenance(const Epoch& e) const;
};

struct SplitSpec {
  double train_frac = 0.70;
  double val_frac = 0.15;
  double test_frac = 0.15;
  uint64_t seed = 0;
  bool stratified = true;
  // `recording` keeps every recording's epochs in one split (subject-wise
  // evaluation); sizes then only approximate the fractions and
  // stratification does not apply.
  enum class Unit { epoch, recording };
  Unit unit = Unit::epoch;
};

struct Band {
  double low_hz = 0.0;
  double high_hz = 0.0;
  double relative_amplitude = 1.0;
};

struct SynthStageProfile {
  Stage stage = Stage::W;
  std::vector<Band> bands;
  double noise_sigma = 0.1;
};

// characteristic EEG bands per stage: W alpha 8-12, N1 theta 4-8,
// N2 spindle 12-15, N3 delta 0.5-4, REM alpha+theta
std::vector<SynthStageProfile> default_stage_profiles(double noise_sigma = 0.1);
SynthStageProfile profile_for_stage(Stage s, double noise_sigma = 0.1);

// published per-stage undersampling targets; names: "sleep-edfx", "isruc"
std::map<Stage, size_t> undersample_preset(const std::string& name);

// One epoch per fully labeled 30-s window; MOVEMENT/UNKNOWN windows and the
// partial trailing window are dropped. Window indices are preserved in
// provenance even across dropped windows.
EpochSet epoch_recording(const edf::MultiChannelRecord& record,
                         const edf::StageAnnotations& ann);

// Per-epoch, per-channel mean and population standard deviation.
struct NormalizationStats {
  std::vector<double> mean;  // one entry per channel
  std::vector<double> std;   // population form, >= 0
};

// Per-channel z-score with the population standard deviation; channels with
// std <= 1e-8 become all zeros. Pass `stats` to capture the estimates used.
Epoch zscore(const Epoch& epoch, size_t n_channels, NormalizationStats* stats = nullptr);
EpochSet zscore_all(EpochSet set);

// Uniform random subset of exactly targets[stage] epochs per listed stage;
// stages without a target are kept whole. Deterministic under seed.
EpochSet undersample(const EpochSet& set, const std::map<Stage, size_t>& targets, uint64_t seed);

// Random partition with sizes round(N*train)/round(N*val)/remainder,
// stratified per class by default. Deterministic under spec.seed.
struct SplitResult {
  EpochSet train, val, test;
};
SplitResult split(const EpochSet& set, const SplitSpec& spec);

EpochSet map_labels(const EpochSet& set, LabelScheme scheme);

// Band-limited sinusoids (frequency and phase drawn uniformly per band) plus
// Gaussian noise, independently per channel via counter-based streams.
EpochSet generate_synthetic(const std::vector<SynthStageProfile>& profiles, size_t n_per_class,
                            size_t n_channels, double sample_rate_hz, uint64_t seed);

}  // namespace ssnet::data
