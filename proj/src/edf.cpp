#include "ssnet/edf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ssnet::edf {

namespace {

constexpr size_t kHeaderBytes = 256;
constexpr size_t kPerSignalBytes = 256;

std::string trim(std::string s) {
  const auto last = s.find_last_not_of(' ');
  if (last == std::string::npos) return "";
  s.erase(last + 1);
  const auto first = s.find_first_not_of(' ');
  return s.substr(first == std::string::npos ? 0 : first);
}

std::string field(std::span<const uint8_t> bytes, size_t off, size_t len) {
  return std::string(reinterpret_cast<const char*>(bytes.data()) + off, len);
}

long parse_long(const std::string& raw, const char* what) {
  const std::string s = trim(raw);
  if (s.empty()) throw MalformedHeader(std::string("empty numeric field: ") + what);
  size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(s, &pos);
  } catch (const std::exception&) {
    throw MalformedHeader(std::string("non-numeric field: ") + what + " = '" + s + "'");
  }
  if (pos != s.size())
    throw MalformedHeader(std::string("non-numeric field: ") + what + " = '" + s + "'");
  return v;
}

double parse_double(const std::string& raw, const char* what) {
  const std::string s = trim(raw);
  if (s.empty()) throw MalformedHeader(std::string("empty numeric field: ") + what);
  size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw MalformedHeader(std::string("non-numeric field: ") + what + " = '" + s + "'");
  }
  if (pos != s.size())
    throw MalformedHeader(std::string("non-numeric field: ") + what + " = '" + s + "'");
  return v;
}

int two_digits(const std::string& s, size_t off, const char* what) {
  if (s.size() < off + 2 || !isdigit(s[off]) || !isdigit(s[off + 1]))
    throw MalformedHeader(std::string("bad date/time field: ") + what);
  return (s[off] - '0') * 10 + (s[off + 1] - '0');
}

// EDF clipping-date convention: two-digit years 85..99 are 19xx, else 20xx.
DateTime parse_datetime(const std::string& date, const std::string& time) {
  DateTime dt;
  dt.day = two_digits(date, 0, "startdate");
  dt.month = two_digits(date, 3, "startdate");
  const int yy = two_digits(date, 6, "startdate");
  dt.year = yy >= 85 ? 1900 + yy : 2000 + yy;
  dt.hour = two_digits(time, 0, "starttime");
  dt.minute = two_digits(time, 3, "starttime");
  dt.second = two_digits(time, 6, "starttime");
  return dt;
}

void put_field(std::string& out, const std::string& value, size_t width, const char* what) {
  if (value.size() > width)
    throw MalformedHeader(std::string("header field too wide: ") + what + " = '" + value + "'");
  out += value;
  out.append(width - value.size(), ' ');
}

std::string format_number(double v, size_t width, const char* what) {
  char buf[64];
  // shortest representation that reparses exactly and fits the field
  for (int prec = 0; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strlen(buf) <= width && std::strtod(buf, nullptr) == v) return buf;
  }
  throw MalformedHeader(std::string("numeric field does not fit: ") + what);
}

struct RawSignal {
  ChannelSpec spec;
  std::vector<int16_t> digital;
};

struct RawEdf {
  RecordingHeader header;
  std::vector<RawSignal> signals;
};

RawEdf parse_raw(std::span<const uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) throw MalformedHeader("file shorter than 256-byte header");
  RawEdf out;
  RecordingHeader& h = out.header;

  h.version_tag = trim(field(bytes, 0, 8));
  if (field(bytes, 0, 8) != "0       ")
    throw MalformedHeader("bad version field (expected '0' padded with spaces)");
  h.patient_id = trim(field(bytes, 8, 80));
  h.recording_id = trim(field(bytes, 88, 80));
  h.start_datetime = parse_datetime(field(bytes, 168, 8), field(bytes, 176, 8));
  const long header_bytes = parse_long(field(bytes, 184, 8), "header bytes");
  const std::string reserved = field(bytes, 192, 44);
  h.discontinuous = reserved.rfind("EDF+D", 0) == 0;
  h.n_data_records = parse_long(field(bytes, 236, 8), "n_data_records");
  h.record_duration_s = parse_double(field(bytes, 244, 8), "record duration");
  const long ns = parse_long(field(bytes, 252, 4), "n_signals");
  if (ns < 0) throw MalformedHeader("negative signal count");
  h.n_signals = static_cast<size_t>(ns);

  const size_t full_header = kHeaderBytes + kPerSignalBytes * h.n_signals;
  if (header_bytes != static_cast<long>(full_header))
    throw MalformedHeader("header byte count does not match 256 + 256 * n_signals");
  if (bytes.size() < full_header) throw MalformedHeader("file shorter than signal headers");
  if (h.n_data_records < -1) throw MalformedHeader("invalid data record count");
  if (!(h.record_duration_s > 0)) throw MalformedHeader("record duration must be > 0");

  // per-signal header fields are stored field-major
  const size_t n = h.n_signals;
  size_t off = kHeaderBytes;
  auto sig_field = [&](size_t idx, size_t base, size_t width) {
    return field(bytes, base + idx * width, width);
  };
  const size_t label_off = off;
  const size_t transducer_off = label_off + 16 * n;
  const size_t dim_off = transducer_off + 80 * n;
  const size_t pmin_off = dim_off + 8 * n;
  const size_t pmax_off = pmin_off + 8 * n;
  const size_t dmin_off = pmax_off + 8 * n;
  const size_t dmax_off = dmin_off + 8 * n;
  const size_t prefilter_off = dmax_off + 8 * n;
  const size_t spr_off = prefilter_off + 80 * n;

  out.signals.resize(n);
  size_t record_samples = 0;
  for (size_t i = 0; i < n; ++i) {
    ChannelSpec& c = out.signals[i].spec;
    c.label = trim(sig_field(i, label_off, 16));
    c.physical_dim = trim(sig_field(i, dim_off, 8));
    c.physical_min = parse_double(sig_field(i, pmin_off, 8), "physical min");
    c.physical_max = parse_double(sig_field(i, pmax_off, 8), "physical max");
    c.digital_min = static_cast<int>(parse_long(sig_field(i, dmin_off, 8), "digital min"));
    c.digital_max = static_cast<int>(parse_long(sig_field(i, dmax_off, 8), "digital max"));
    const long spr = parse_long(sig_field(i, spr_off, 8), "samples per record");
    if (spr < 0) throw MalformedHeader("negative samples per record");
    c.samples_per_record = static_cast<size_t>(spr);
    c.sample_rate_hz = static_cast<double>(c.samples_per_record) / h.record_duration_s;
    if (c.digital_min >= c.digital_max)
      throw CalibrationDegenerate("channel '" + c.label + "': digital_min >= digital_max");
    if (c.physical_min == c.physical_max)
      throw CalibrationDegenerate("channel '" + c.label + "': physical_min == physical_max");
    record_samples += c.samples_per_record;
  }

  const size_t record_bytes = record_samples * 2;
  const size_t data_bytes = bytes.size() - full_header;
  long n_records = h.n_data_records;
  if (n_records == -1)  // unknown: resolve by scanning
    n_records = record_bytes == 0 ? 0 : static_cast<long>(data_bytes / record_bytes);
  if (data_bytes < static_cast<size_t>(n_records) * record_bytes)
    throw TruncatedData("file shorter than the header promises");
  h.n_data_records = n_records;

  for (size_t i = 0; i < n; ++i)
    out.signals[i].digital.reserve(static_cast<size_t>(n_records) *
                                   out.signals[i].spec.samples_per_record);
  const uint8_t* p = bytes.data() + full_header;
  for (long r = 0; r < n_records; ++r)
    for (size_t i = 0; i < n; ++i) {
      RawSignal& sig = out.signals[i];
      for (size_t s = 0; s < sig.spec.samples_per_record; ++s) {
        const uint16_t lo = *p++;
        const uint16_t hi = *p++;
        sig.digital.push_back(static_cast<int16_t>(lo | (hi << 8)));
      }
    }
  return out;
}

}  // namespace

const Channel* MultiChannelRecord::find(const std::string& label) const {
  for (const Channel& c : channels)
    if (c.spec.label == label) return &c;
  return nullptr;
}

const char* to_string(AnnStage s) {
  switch (s) {
    case AnnStage::W: return "W";
    case AnnStage::N1: return "N1";
    case AnnStage::N2: return "N2";
    case AnnStage::N3: return "N3";
    case AnnStage::N4: return "N4";
    case AnnStage::REM: return "REM";
    case AnnStage::MOVEMENT: return "MOVEMENT";
    case AnnStage::UNKNOWN: return "UNKNOWN";
  }
  return "?";
}

MultiChannelRecord parse_edf(std::span<const uint8_t> bytes) {
  RawEdf raw = parse_raw(bytes);
  MultiChannelRecord rec;
  rec.header = raw.header;
  rec.channels.reserve(raw.signals.size());
  for (RawSignal& sig : raw.signals) {
    Channel ch;
    ch.spec = sig.spec;
    const double scale = (ch.spec.physical_max - ch.spec.physical_min) /
                         (static_cast<double>(ch.spec.digital_max) - ch.spec.digital_min);
    ch.samples.resize(sig.digital.size());
    for (size_t i = 0; i < sig.digital.size(); ++i)
      ch.samples[i] = static_cast<float>(
          (sig.digital[i] - ch.spec.digital_min) * scale + ch.spec.physical_min);
    rec.channels.push_back(std::move(ch));
  }
  return rec;
}

std::vector<uint8_t> write_edf(const MultiChannelRecord& record) {
  const RecordingHeader& h = record.header;
  if (record.channels.size() != h.n_signals)
    throw MalformedHeader("header n_signals does not match channel count");
  if (h.n_data_records < 0) throw MalformedHeader("n_data_records must be resolved before writing");
  for (const Channel& c : record.channels) {
    if (c.spec.digital_min >= c.spec.digital_max)
      throw CalibrationDegenerate("channel '" + c.spec.label + "': digital_min >= digital_max");
    if (c.spec.physical_min == c.spec.physical_max)
      throw CalibrationDegenerate("channel '" + c.spec.label + "': physical_min == physical_max");
    if (c.samples.size() !=
        static_cast<size_t>(h.n_data_records) * c.spec.samples_per_record)
      throw MalformedHeader("channel '" + c.spec.label +
                            "': trace length != n_data_records * samples_per_record");
    const double lo = std::min(c.spec.physical_min, c.spec.physical_max);
    const double hi = std::max(c.spec.physical_min, c.spec.physical_max);
    for (float v : c.samples)
      if (v < lo || v > hi)
        throw RangeOverflow("channel '" + c.spec.label + "': sample " + std::to_string(v) +
                            " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }

  std::string out;
  out.reserve(kHeaderBytes + kPerSignalBytes * h.n_signals);
  put_field(out, "0", 8, "version");
  put_field(out, h.patient_id, 80, "patient id");
  put_field(out, h.recording_id, 80, "recording id");
  char buf[32];
  const DateTime& dt = h.start_datetime;
  std::snprintf(buf, sizeof(buf), "%02d.%02d.%02d", dt.day, dt.month, dt.year % 100);
  put_field(out, buf, 8, "startdate");
  std::snprintf(buf, sizeof(buf), "%02d.%02d.%02d", dt.hour, dt.minute, dt.second);
  put_field(out, buf, 8, "starttime");
  put_field(out, std::to_string(kHeaderBytes + kPerSignalBytes * h.n_signals), 8, "header bytes");
  put_field(out, h.discontinuous ? "EDF+D" : "", 44, "reserved");
  put_field(out, std::to_string(h.n_data_records), 8, "n_data_records");
  put_field(out, format_number(h.record_duration_s, 8, "record duration"), 8, "record duration");
  put_field(out, std::to_string(h.n_signals), 4, "n_signals");

  auto each = [&](auto&& fn, size_t width, const char* what) {
    for (const Channel& c : record.channels) put_field(out, fn(c.spec), width, what);
  };
  each([](const ChannelSpec& c) { return c.label; }, 16, "label");
  each([](const ChannelSpec&) { return std::string(); }, 80, "transducer");
  each([](const ChannelSpec& c) { return c.physical_dim; }, 8, "physical dim");
  each([](const ChannelSpec& c) { return format_number(c.physical_min, 8, "physical min"); }, 8,
       "physical min");
  each([](const ChannelSpec& c) { return format_number(c.physical_max, 8, "physical max"); }, 8,
       "physical max");
  each([](const ChannelSpec& c) { return std::to_string(c.digital_min); }, 8, "digital min");
  each([](const ChannelSpec& c) { return std::to_string(c.digital_max); }, 8, "digital max");
  each([](const ChannelSpec&) { return std::string(); }, 80, "prefiltering");
  each([](const ChannelSpec& c) { return std::to_string(c.samples_per_record); }, 8,
       "samples per record");
  each([](const ChannelSpec&) { return std::string(); }, 32, "signal reserved");

  std::vector<uint8_t> bytes(out.begin(), out.end());
  for (long r = 0; r < h.n_data_records; ++r)
    for (const Channel& c : record.channels) {
      const double scale = (static_cast<double>(c.spec.digital_max) - c.spec.digital_min) /
                           (c.spec.physical_max - c.spec.physical_min);
      for (size_t s = 0; s < c.spec.samples_per_record; ++s) {
        const double p = c.samples[static_cast<size_t>(r) * c.spec.samples_per_record + s];
        long d = std::lround((p - c.spec.physical_min) * scale + c.spec.digital_min);
        d = std::clamp<long>(d, c.spec.digital_min, c.spec.digital_max);
        bytes.push_back(static_cast<uint8_t>(d & 0xff));
        bytes.push_back(static_cast<uint8_t>((d >> 8) & 0xff));
      }
    }
  return bytes;
}

namespace {

AnnStage stage_from_text(const std::string& text) {
  if (text == "Sleep stage W") return AnnStage::W;
  if (text == "Sleep stage 1") return AnnStage::N1;
  if (text == "Sleep stage 2") return AnnStage::N2;
  if (text == "Sleep stage 3") return AnnStage::N3;  // AASM merge
  if (text == "Sleep stage 4") return AnnStage::N3;  // AASM merge
  if (text == "Sleep stage R") return AnnStage::REM;
  if (text == "Movement time") return AnnStage::MOVEMENT;
  if (text == "Sleep stage ?" || text == "?") return AnnStage::UNKNOWN;
  throw UnknownStageToken("unrecognized stage annotation '" + text + "'");
}

StageAnnotations parse_edfplus_annotations(std::span<const uint8_t> bytes) {
  RawEdf raw = parse_raw(bytes);
  const RawSignal* ann_sig = nullptr;
  for (const RawSignal& s : raw.signals)
    if (s.spec.label == "EDF Annotations") {
      ann_sig = &s;
      break;
    }
  if (!ann_sig) throw MalformedHeader("no 'EDF Annotations' signal in file");

  // annotation samples are a byte stream stored as 16-bit words
  std::string stream;
  stream.reserve(ann_sig->digital.size() * 2);
  for (int16_t w : ann_sig->digital) {
    const uint16_t u = static_cast<uint16_t>(w);
    stream.push_back(static_cast<char>(u & 0xff));
    stream.push_back(static_cast<char>((u >> 8) & 0xff));
  }

  StageAnnotations out;
  size_t pos = 0;
  while (pos < stream.size()) {
    const size_t end = stream.find('\0', pos);
    if (end == std::string::npos) break;
    const std::string tal = stream.substr(pos, end - pos);
    pos = end + 1;
    if (tal.empty()) continue;
    const size_t text_sep = tal.find('\x14');
    if (text_sep == std::string::npos)
      throw MalformedHeader("annotation TAL without text separator");
    std::string onset_field = tal.substr(0, text_sep);
    if (onset_field.empty() || (onset_field[0] != '+' && onset_field[0] != '-'))
      throw MalformedHeader("annotation onset must start with + or -");
    double duration = -1.0;
    const size_t dur_sep = onset_field.find('\x15');
    if (dur_sep != std::string::npos) {
      duration = parse_double(onset_field.substr(dur_sep + 1), "annotation duration");
      onset_field = onset_field.substr(0, dur_sep);
    }
    const double onset = parse_double(onset_field, "annotation onset");

    // remaining fields: \x14-separated annotation texts
    size_t tpos = text_sep + 1;
    while (tpos <= tal.size()) {
      const size_t tend = tal.find('\x14', tpos);
      const std::string text =
          tend == std::string::npos ? tal.substr(tpos) : tal.substr(tpos, tend - tpos);
      if (!text.empty()) {
        if (duration <= 0)
          throw MalformedHeader("stage annotation '" + text + "' lacks a positive duration");
        out.entries.push_back({onset, duration, stage_from_text(text)});
      }
      if (tend == std::string::npos) break;
      tpos = tend + 1;
    }
  }

  std::stable_sort(out.entries.begin(), out.entries.end(),
                   [](const StageEntry& a, const StageEntry& b) { return a.onset_s < b.onset_s; });
  for (size_t i = 1; i < out.entries.size(); ++i)
    if (out.entries[i].onset_s <
        out.entries[i - 1].onset_s + out.entries[i - 1].duration_s - 1e-9)
      throw OverlappingEntries("annotations at " + std::to_string(out.entries[i - 1].onset_s) +
                               "s and " + std::to_string(out.entries[i].onset_s) + "s overlap");
  return out;
}

StageAnnotations parse_isruc_list(std::span<const uint8_t> bytes) {
  std::istringstream in(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  StageAnnotations out;
  std::string tok;
  size_t idx = 0;
  while (in >> tok) {
    AnnStage stage;
    if (tok == "0") stage = AnnStage::W;
    else if (tok == "1") stage = AnnStage::N1;
    else if (tok == "2") stage = AnnStage::N2;
    else if (tok == "3") stage = AnnStage::N3;
    else if (tok == "5") stage = AnnStage::REM;
    else throw UnknownStageToken("unrecognized ISRUC stage token '" + tok + "'");
    out.entries.push_back({static_cast<double>(idx) * 30.0, 30.0, stage});
    ++idx;
  }
  return out;
}

}  // namespace

StageAnnotations parse_hypnogram(std::span<const uint8_t> bytes, HypnogramFormat format) {
  switch (format) {
    case HypnogramFormat::edfplus_annotations: return parse_edfplus_annotations(bytes);
    case HypnogramFormat::isruc_epoch_list: return parse_isruc_list(bytes);
  }
  throw UsageError("unknown hypnogram format");
}

MultiChannelRecord select_channels(const MultiChannelRecord& record,
                                   const std::vector<std::string>& names) {
  MultiChannelRecord out;
  out.header = record.header;
  out.channels.reserve(names.size());
  for (const std::string& name : names) {
    const Channel* ch = record.find(name);
    if (!ch) throw MissingChannel("channel '" + name + "' not present");
    out.channels.push_back(*ch);
  }
  out.header.n_signals = out.channels.size();
  for (const Channel& c : out.channels)
    if (c.spec.sample_rate_hz != out.channels.front().spec.sample_rate_hz)
      throw MixedSampleRate("selected channels have differing sample rates (" +
                            std::to_string(c.spec.sample_rate_hz) + " vs " +
                            std::to_string(out.channels.front().spec.sample_rate_hz) + " Hz)");
  return out;
}

std::vector<AnnStage> expand_to_epochs(const StageAnnotations& ann) {
  std::vector<AnnStage> labels;
  for (const StageEntry& e : ann.entries) {
    const auto n = static_cast<size_t>(std::floor(e.duration_s / 30.0 + 1e-9));
    labels.insert(labels.end(), n, e.stage);
  }
  return labels;
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace ssnet::edf
