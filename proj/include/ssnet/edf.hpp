#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssnet/errors.hpp"

namespace ssnet::edf {

struct DateTime {
  int year = 1985, month = 1, day = 1;
  int hour = 0, minute = 0, second = 0;
  bool operator==(const DateTime&) const = default;
};

struct RecordingHeader {
  std::string version_tag = "0";
  std::string patient_id;
  std::string recording_id;
  DateTime start_datetime;
  long n_data_records = 0;  // resolved to >= 0 after parsing (-1 in file means unknown)
  double record_duration_s = 1.0;
  size_t n_signals = 0;
  bool discontinuous = false;  // EDF+D marker; warning only, treated as contiguous
};

struct ChannelSpec {
  std::string label;
  std::string physical_dim;
  double physical_min = -1.0;
  double physical_max = 1.0;
  int digital_min = -32768;
  int digital_max = 32767;
  size_t samples_per_record = 0;
  double sample_rate_hz = 0.0;  // samples_per_record / record_duration_s
};

struct Channel {
  ChannelSpec spec;
  std::vector<float> samples;  // physical units, length n_data_records * samples_per_record
};

struct MultiChannelRecord {
  RecordingHeader header;
  std::vector<Channel> channels;
  const Channel* find(const std::string& label) const;
};

enum class AnnStage : uint8_t { W, N1, N2, N3, N4, REM, MOVEMENT, UNKNOWN };

const char* to_string(AnnStage s);

struct StageEntry {
  double onset_s = 0.0;
  double duration_s = 0.0;
  AnnStage stage = AnnStage::UNKNOWN;
};

struct StageAnnotations {
  std::vector<StageEntry> entries;  // sorted by onset, non-overlapping
};

enum class HypnogramFormat { edfplus_annotations, isruc_epoch_list };

// Decodes little-endian 16-bit samples to physical units via
// p = (d - digital_min) * (physical_max - physical_min) / (digital_max - digital_min)
//     + physical_min.
MultiChannelRecord parse_edf(std::span<const uint8_t> bytes);

// Byte-exact EDF layout; parse_edf(write_edf(r)) is the identity up to one
// digital quantum on samples. Throws RangeOverflow when a sample falls
// outside its channel's physical range.
std::vector<uint8_t> write_edf(const MultiChannelRecord& record);

// EDF+ annotation TALs or ISRUC one-integer-per-epoch text lists.
// 'Sleep stage 4' is merged into N3 at parse time (AASM labels downstream).
StageAnnotations parse_hypnogram(std::span<const uint8_t> bytes, HypnogramFormat format);

// Reorders channels to the requested order and drops the rest; selected
// channels must share one sample rate. Sample values are never modified.
MultiChannelRecord select_channels(const MultiChannelRecord& record,
                                   const std::vector<std::string>& names);

// Expands annotations into consecutive 30-second epoch labels.
std::vector<AnnStage> expand_to_epochs(const StageAnnotations& ann);

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const uint8_t> bytes);

}  // namespace ssnet::edf
