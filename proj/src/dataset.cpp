#include "ssnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "ssnet/rng.hpp"

namespace ssnet::data {

const char* to_string(Stage s) {
  switch (s) {
    case Stage::W: return "W";
    case Stage::N1: return "N1";
    case Stage::N2: return "N2";
    case Stage::N3: return "N3";
    case Stage::REM: return "REM";
  }
  return "?";
}

Stage stage_from_string(const std::string& name) {
  for (Stage s : {Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::REM})
    if (name == to_string(s)) return s;
  if (name == "R") return Stage::REM;
  throw UsageError("unknown stage name '" + name + "'");
}

LabelScheme LabelScheme::from_name(const std::string& name) {
  if (name == "three_class" || name == "three" || name == "3") return three();
  if (name == "five_class" || name == "five" || name == "5") return five();
  throw UsageError("unknown label scheme '" + name + "'");
}

int LabelScheme::class_of(Stage s) const {
  if (variant == Variant::five_class) return static_cast<int>(s);
  switch (s) {
    case Stage::W: return 0;
    case Stage::N1:
    case Stage::N2:
    case Stage::N3: return 1;  // NREM
    case Stage::REM: return 2;
  }
  return 0;
}

std::vector<std::string> LabelScheme::class_names() const {
  if (variant == Variant::three_class) return {"W", "NREM", "REM"};
  return {"W", "N1", "N2", "N3", "REM"};
}

std::vector<size_t> EpochSet::class_counts() const {
  std::vector<size_t> counts(n_classes(), 0);
  for (const Epoch& e : epochs) ++counts[static_cast<size_t>(class_of(e))];
  return counts;
}

std::array<size_t, kNumStages> EpochSet::stage_counts() const {
  std::array<size_t, kNumStages> counts{};
  for (const Epoch& e : epochs) ++counts[static_cast<size_t>(e.stage)];
  return counts;
}

std::string EpochSet::provenance(const Epoch& e) const {
  return recording_ids[e.rec] + "#" + std::to_string(e.index);
}

std::vector<SynthStageProfile> default_stage_profiles(double noise_sigma) {
  return {profile_for_stage(Stage::W, noise_sigma), profile_for_stage(Stage::N1, noise_sigma),
          profile_for_stage(Stage::N2, noise_sigma), profile_for_stage(Stage::N3, noise_sigma),
          profile_for_stage(Stage::REM, noise_sigma)};
}

SynthStageProfile profile_for_stage(Stage s, double noise_sigma) {
  SynthStageProfile p;
  p.stage = s;
  p.noise_sigma = noise_sigma;
  switch (s) {
    case Stage::W: p.bands = {{8.0, 12.0, 1.0}}; break;            // alpha
    case Stage::N1: p.bands = {{4.0, 8.0, 1.0}}; break;            // theta
    case Stage::N2: p.bands = {{12.0, 15.0, 1.0}}; break;          // spindle
    case Stage::N3: p.bands = {{0.5, 4.0, 1.0}}; break;            // delta
    case Stage::REM: p.bands = {{8.0, 12.0, 1.0}, {4.0, 8.0, 1.0}}; break;
  }
  return p;
}

std::map<Stage, size_t> undersample_preset(const std::string& name) {
  if (name == "sleep-edfx")
    return {{Stage::W, 25201},
            {Stage::N1, 3207},
            {Stage::N2, 16748},
            {Stage::N3, 5246},
            {Stage::REM, 21602}};
  if (name == "isruc")
    return {{Stage::W, 19810},
            {Stage::N1, 4935},
            {Stage::N2, 12668},
            {Stage::N3, 7846},
            {Stage::REM, 11256}};
  throw UsageError("unknown undersample preset '" + name + "'");
}

namespace {

bool stage_for_window(const edf::StageAnnotations& ann, double t0, double t1, Stage* out) {
  for (const edf::StageEntry& e : ann.entries) {
    if (e.onset_s > t0 + 1e-9) break;  // sorted; no entry can cover this window
    if (e.onset_s <= t0 + 1e-9 && e.onset_s + e.duration_s >= t1 - 1e-9) {
      switch (e.stage) {
        case edf::AnnStage::W: *out = Stage::W; return true;
        case edf::AnnStage::N1: *out = Stage::N1; return true;
        case edf::AnnStage::N2: *out = Stage::N2; return true;
        case edf::AnnStage::N3:
        case edf::AnnStage::N4: *out = Stage::N3; return true;
        case edf::AnnStage::REM: *out = Stage::REM; return true;
        case edf::AnnStage::MOVEMENT:
        case edf::AnnStage::UNKNOWN: return false;  // dropped downstream
      }
    }
  }
  return false;
}

}  // namespace

EpochSet epoch_recording(const edf::MultiChannelRecord& record,
                         const edf::StageAnnotations& ann) {
  if (record.channels.empty()) throw EmptyOverlap("record has no channels");
  const double rate = record.channels.front().spec.sample_rate_hz;
  for (const edf::Channel& c : record.channels)
    if (c.spec.sample_rate_hz != rate)
      throw MixedSampleRate("epoching requires one sample rate across channels");
  const double len_d = 30.0 * rate;
  const auto epoch_len = static_cast<size_t>(std::llround(len_d));
  if (epoch_len == 0 || std::fabs(len_d - static_cast<double>(epoch_len)) > 1e-6)
    throw DataError("sample rate does not yield an integral 30-s epoch length");

  size_t n_samples = record.channels.front().samples.size();
  for (const edf::Channel& c : record.channels) n_samples = std::min(n_samples, c.samples.size());
  const size_t n_windows = n_samples / epoch_len;  // partial trailing window dropped

  EpochSet set;
  set.n_channels = record.channels.size();
  set.epoch_len = epoch_len;
  set.sample_rate_hz = rate;
  for (const edf::Channel& c : record.channels) set.channel_names.push_back(c.spec.label);
  std::string rec_id = record.header.recording_id.empty() ? record.header.patient_id
                                                          : record.header.recording_id;
  if (rec_id.empty()) rec_id = "recording";
  set.recording_ids.push_back(rec_id);

  for (size_t w = 0; w < n_windows; ++w) {
    Stage stage;
    if (!stage_for_window(ann, 30.0 * static_cast<double>(w),
                          30.0 * static_cast<double>(w + 1), &stage))
      continue;
    Epoch e;
    e.stage = stage;
    e.rec = 0;
    e.index = static_cast<uint32_t>(w);
    e.samples.resize(set.n_channels * epoch_len);
    for (size_t c = 0; c < set.n_channels; ++c)
      std::copy_n(record.channels[c].samples.begin() + static_cast<ptrdiff_t>(w * epoch_len),
                  epoch_len, e.samples.begin() + static_cast<ptrdiff_t>(c * epoch_len));
    set.epochs.push_back(std::move(e));
  }
  if (set.epochs.empty()) throw EmptyOverlap("no labeled 30-s window fits the recording");
  return set;
}

Epoch zscore(const Epoch& epoch, size_t n_channels, NormalizationStats* stats) {
  const size_t len = epoch.samples.size() / n_channels;
  Epoch out = epoch;
  if (stats) {
    stats->mean.assign(n_channels, 0.0);
    stats->std.assign(n_channels, 0.0);
  }
  for (size_t c = 0; c < n_channels; ++c) {
    const float* src = epoch.samples.data() + c * len;
    double mean = 0.0;
    for (size_t i = 0; i < len; ++i) {
      if (!std::isfinite(src[i])) throw NonFiniteInput("zscore: non-finite sample");
      mean += src[i];
    }
    mean /= static_cast<double>(len);
    double var = 0.0;
    for (size_t i = 0; i < len; ++i) {
      const double d = src[i] - mean;
      var += d * d;
    }
    const double std_pop = std::sqrt(var / static_cast<double>(len));
    if (stats) {
      stats->mean[c] = mean;
      stats->std[c] = std_pop;
    }
    float* dst = out.samples.data() + c * len;
    if (std_pop <= 1e-8) {
      std::fill_n(dst, len, 0.0f);
    } else {
      for (size_t i = 0; i < len; ++i)
        dst[i] = static_cast<float>((src[i] - mean) / std_pop);
    }
  }
  return out;
}

EpochSet zscore_all(EpochSet set) {
  for (Epoch& e : set.epochs) e = zscore(e, set.n_channels);
  set.normalized = true;
  return set;
}

EpochSet undersample(const EpochSet& set, const std::map<Stage, size_t>& targets, uint64_t seed) {
  const auto counts = set.stage_counts();
  for (const auto& [stage, target] : targets)
    if (target > counts[static_cast<size_t>(stage)])
      throw TargetExceedsAvailable("stage " + std::string(to_string(stage)) + ": target " +
                                   std::to_string(target) + " > available " +
                                   std::to_string(counts[static_cast<size_t>(stage)]));

  std::vector<char> keep(set.epochs.size(), 1);
  for (const auto& [stage, target] : targets) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < set.epochs.size(); ++i)
      if (set.epochs[i].stage == stage) idx.push_back(i);
    CounterRng rng(seed, {static_cast<uint64_t>(stage)});
    rng.shuffle(idx);
    for (size_t j = target; j < idx.size(); ++j) keep[idx[j]] = 0;
  }

  EpochSet out = set;
  out.epochs.clear();
  for (size_t i = 0; i < set.epochs.size(); ++i)
    if (keep[i]) out.epochs.push_back(set.epochs[i]);
  return out;
}

namespace {

// Largest-remainder allocation: per class, floor(base[c] * frac) capped by
// cap[c], then top up by descending fractional remainder until the global
// target is met. Keeps every class within one epoch of its ideal share.
std::vector<size_t> largest_remainder(const std::vector<size_t>& base,
                                      const std::vector<size_t>& cap, double frac, size_t want) {
  const size_t k = base.size();
  std::vector<size_t> alloc(k);
  std::vector<std::pair<double, size_t>> rem(k);
  size_t total = 0;
  for (size_t c = 0; c < k; ++c) {
    const double ideal = static_cast<double>(base[c]) * frac;
    alloc[c] = std::min(cap[c], static_cast<size_t>(std::floor(ideal)));
    rem[c] = {ideal - std::floor(ideal), c};
    total += alloc[c];
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    return a.first > b.first;  // ties resolve to the lower class index
  });
  for (size_t i = 0; i < k && total < want; ++i) {
    const size_t c = rem[i].second;
    if (alloc[c] < cap[c]) {
      ++alloc[c];
      ++total;
    }
  }
  for (size_t c = 0; c < k && total < want; ++c)  // capacity-blocked leftovers
    while (alloc[c] < cap[c] && total < want) {
      ++alloc[c];
      ++total;
    }
  return alloc;
}

EpochSet subset(const EpochSet& base, std::vector<size_t> idx) {
  std::sort(idx.begin(), idx.end());
  EpochSet out = base;
  out.epochs.clear();
  out.epochs.reserve(idx.size());
  for (size_t i : idx) out.epochs.push_back(base.epochs[i]);
  return out;
}

}  // namespace

SplitResult split(const EpochSet& set, const SplitSpec& spec) {
  if (std::fabs(spec.train_frac + spec.val_frac + spec.test_frac - 1.0) > 1e-9)
    throw InvalidConfig("split fractions must sum to 1");
  const size_t n = set.epochs.size();
  if (n < 10) throw InvalidConfig("split requires at least 10 epochs");

  const auto n_train = static_cast<size_t>(std::llround(static_cast<double>(n) * spec.train_frac));
  const auto n_val = static_cast<size_t>(std::llround(static_cast<double>(n) * spec.val_frac));

  std::vector<size_t> train_idx, val_idx, test_idx;
  if (spec.unit == SplitSpec::Unit::recording) {
    // whole recordings per split; fill the bucket with the largest deficit
    std::map<uint32_t, std::vector<size_t>> groups;
    for (size_t i = 0; i < n; ++i) groups[set.epochs[i].rec].push_back(i);
    std::vector<uint32_t> order;
    for (const auto& [rec, idx] : groups) order.push_back(rec);
    CounterRng rng(spec.seed, {0x9ec});
    rng.shuffle(order);
    const double targets[3] = {static_cast<double>(n) * spec.train_frac,
                               static_cast<double>(n) * spec.val_frac,
                               static_cast<double>(n) * spec.test_frac};
    double filled[3] = {0, 0, 0};
    std::vector<size_t>* buckets[3] = {&train_idx, &val_idx, &test_idx};
    for (uint32_t rec : order) {
      size_t best = 0;
      for (size_t b = 1; b < 3; ++b)
        if (targets[b] - filled[b] > targets[best] - filled[best]) best = b;
      for (size_t i : groups[rec]) buckets[best]->push_back(i);
      filled[best] += static_cast<double>(groups[rec].size());
    }
  } else if (!spec.stratified) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    CounterRng rng(spec.seed, {0xa11});
    rng.shuffle(idx);
    train_idx.assign(idx.begin(), idx.begin() + static_cast<ptrdiff_t>(n_train));
    val_idx.assign(idx.begin() + static_cast<ptrdiff_t>(n_train),
                   idx.begin() + static_cast<ptrdiff_t>(n_train + n_val));
    test_idx.assign(idx.begin() + static_cast<ptrdiff_t>(n_train + n_val), idx.end());
  } else {
    const size_t k = set.n_classes();
    std::vector<std::vector<size_t>> by_class(k);
    for (size_t i = 0; i < n; ++i)
      by_class[static_cast<size_t>(set.class_of(set.epochs[i]))].push_back(i);
    for (size_t c = 0; c < k; ++c) {
      CounterRng rng(spec.seed, {0x57a7, c});
      rng.shuffle(by_class[c]);
    }
    std::vector<size_t> avail(k);
    for (size_t c = 0; c < k; ++c) avail[c] = by_class[c].size();
    const std::vector<size_t> t_alloc = largest_remainder(avail, avail, spec.train_frac, n_train);
    std::vector<size_t> left(k);
    for (size_t c = 0; c < k; ++c) left[c] = avail[c] - t_alloc[c];
    const std::vector<size_t> v_alloc = largest_remainder(avail, left, spec.val_frac, n_val);
    for (size_t c = 0; c < k; ++c) {
      const auto& idx = by_class[c];
      size_t pos = 0;
      for (size_t j = 0; j < t_alloc[c]; ++j) train_idx.push_back(idx[pos++]);
      for (size_t j = 0; j < std::min(v_alloc[c], idx.size() - pos); ++j)
        val_idx.push_back(idx[pos++]);
      for (; pos < idx.size(); ++pos) test_idx.push_back(idx[pos]);
    }
  }

  SplitResult out{subset(set, std::move(train_idx)), subset(set, std::move(val_idx)),
                  subset(set, std::move(test_idx))};
  return out;
}

EpochSet map_labels(const EpochSet& set, LabelScheme scheme) {
  EpochSet out = set;
  out.scheme = scheme;
  return out;
}

EpochSet generate_synthetic(const std::vector<SynthStageProfile>& profiles, size_t n_per_class,
                            size_t n_channels, double sample_rate_hz, uint64_t seed) {
  if (profiles.empty()) throw InvalidConfig("no synthesis profiles given");
  for (const SynthStageProfile& p : profiles)
    for (const Band& b : p.bands)
      if (!(0.0 < b.low_hz && b.low_hz < b.high_hz && b.high_hz < sample_rate_hz / 2.0))
        throw NyquistViolation("band [" + std::to_string(b.low_hz) + ", " +
                               std::to_string(b.high_hz) + "] Hz invalid at " +
                               std::to_string(sample_rate_hz) + " Hz sampling");

  const double len_d = 30.0 * sample_rate_hz;
  const auto epoch_len = static_cast<size_t>(std::llround(len_d));
  if (epoch_len == 0 || std::fabs(len_d - static_cast<double>(epoch_len)) > 1e-6)
    throw InvalidConfig("sample rate does not yield an integral 30-s epoch length");

  EpochSet set;
  set.n_channels = n_channels;
  set.epoch_len = epoch_len;
  set.sample_rate_hz = sample_rate_hz;
  for (size_t c = 0; c < n_channels; ++c) set.channel_names.push_back("synth" + std::to_string(c));
  set.epochs.reserve(profiles.size() * n_per_class);

  for (const SynthStageProfile& p : profiles) {
    const auto stage_tag = static_cast<uint64_t>(p.stage);
    set.recording_ids.push_back(std::string("synth:") + to_string(p.stage));
    const auto rec = static_cast<uint32_t>(set.recording_ids.size() - 1);
    for (size_t i = 0; i < n_per_class; ++i) {
      Epoch e;
      e.stage = p.stage;
      e.rec = rec;
      e.index = static_cast<uint32_t>(i);
      e.samples.resize(n_channels * epoch_len);
      for (size_t c = 0; c < n_channels; ++c) {
        CounterRng rng(seed, {stage_tag, i, c});
        float* dst = e.samples.data() + c * epoch_len;
        for (const Band& b : p.bands) {
          const double f = rng.next_uniform(b.low_hz, b.high_hz);
          const double phase = rng.next_uniform(0.0, 2.0 * std::numbers::pi);
          const double w = 2.0 * std::numbers::pi * f / sample_rate_hz;
          for (size_t t = 0; t < epoch_len; ++t)
            dst[t] += static_cast<float>(b.relative_amplitude *
                                         std::sin(w * static_cast<double>(t) + phase));
        }
        if (p.noise_sigma > 0.0)
          for (size_t t = 0; t < epoch_len; ++t)
            dst[t] += static_cast<float>(p.noise_sigma * rng.next_normal());
      }
      set.epochs.push_back(std::move(e));
    }
  }
  return set;
}

}  // namespace ssnet::data
