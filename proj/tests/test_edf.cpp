#include <doctest.h>

#include "ssnet/edf.hpp"
#include "ssnet/rng.hpp"
#include "testutil.hpp"

using namespace ssnet;
using namespace ssnet::edf;

TEST_CASE("parse minimal single-channel file with identity calibration") {
  testutil::RawChannel ch;
  ch.label = "EEG Fpz-Cz";
  ch.samples_per_record = 3;
  ch.digital = {0, 100, -100};
  const auto bytes = testutil::build_edf_bytes({ch}, 1);
  const MultiChannelRecord rec = parse_edf(bytes);

  CHECK(rec.header.version_tag == "0");
  CHECK(rec.header.patient_id == "test patient");
  CHECK(rec.header.recording_id == "test recording");
  CHECK(rec.header.n_data_records == 1);
  CHECK(rec.header.record_duration_s == 1.0);
  CHECK(rec.header.n_signals == 1);
  CHECK(rec.header.start_datetime.year == 1999);
  CHECK(rec.header.start_datetime.hour == 23);
  REQUIRE(rec.channels.size() == 1);
  CHECK(rec.channels[0].spec.label == "EEG Fpz-Cz");
  CHECK(rec.channels[0].spec.sample_rate_hz == 3.0);
  REQUIRE(rec.channels[0].samples.size() == 3);
  CHECK(rec.channels[0].samples[0] == 0.0f);
  CHECK(rec.channels[0].samples[1] == 100.0f);
  CHECK(rec.channels[0].samples[2] == -100.0f);
}

TEST_CASE("non-identity calibration applies the linear map") {
  testutil::RawChannel ch;
  ch.label = "x";
  ch.phys_min = "0";
  ch.phys_max = "10";
  ch.dig_min = "0";
  ch.dig_max = "100";
  ch.samples_per_record = 2;
  ch.digital = {0, 50};
  const MultiChannelRecord rec = parse_edf(testutil::build_edf_bytes({ch}, 1));
  CHECK(rec.channels[0].samples[0] == doctest::Approx(0.0));
  CHECK(rec.channels[0].samples[1] == doctest::Approx(5.0));
}

TEST_CASE("truncated and malformed headers are rejected") {
  testutil::RawChannel ch;
  ch.label = "x";
  ch.samples_per_record = 2;
  ch.digital = {1, 2};
  auto bytes = testutil::build_edf_bytes({ch}, 1);

  SUBCASE("200-byte file") {
    bytes.resize(200);
    CHECK_THROWS_AS(parse_edf(bytes), MalformedHeader);
  }
  SUBCASE("wrong version magic") {
    bytes[0] = 'X';
    CHECK_THROWS_AS(parse_edf(bytes), MalformedHeader);
  }
  SUBCASE("non-numeric record count") {
    for (size_t i = 236; i < 244; ++i) bytes[i] = 'z';
    CHECK_THROWS_AS(parse_edf(bytes), MalformedHeader);
  }
  SUBCASE("data shorter than promised") {
    bytes.resize(bytes.size() - 2);
    CHECK_THROWS_AS(parse_edf(bytes), TruncatedData);
  }
  SUBCASE("degenerate digital calibration") {
    testutil::RawChannel bad = ch;
    bad.dig_min = "5";
    bad.dig_max = "5";
    CHECK_THROWS_AS(parse_edf(testutil::build_edf_bytes({bad}, 1)), CalibrationDegenerate);
  }
}

TEST_CASE("unknown record count is resolved by scanning") {
  testutil::RawChannel ch;
  ch.label = "x";
  ch.samples_per_record = 2;
  ch.digital = {1, 2, 3, 4, 5, 6};
  const auto bytes = testutil::build_edf_bytes({ch}, -1);
  const MultiChannelRecord rec = parse_edf(bytes);
  CHECK(rec.header.n_data_records == 3);
  CHECK(rec.channels[0].samples.size() == 6);
}

TEST_CASE("EDF+D reserved field sets the discontinuity warning flag") {
  testutil::RawChannel ch;
  ch.label = "x";
  ch.samples_per_record = 1;
  ch.digital = {0};
  const auto bytes = testutil::build_edf_bytes({ch}, 1, "1", "p", "r", "EDF+D");
  CHECK(parse_edf(bytes).header.discontinuous);
}

TEST_CASE("write_edf: empty record is a bare 256-byte header") {
  MultiChannelRecord rec;
  rec.header.n_signals = 0;
  rec.header.n_data_records = 0;
  const auto bytes = write_edf(rec);
  CHECK(bytes.size() == 256);
  const MultiChannelRecord back = parse_edf(bytes);
  CHECK(back.channels.empty());
}

TEST_CASE("write_edf rejects samples outside the physical range") {
  MultiChannelRecord rec;
  rec.header.n_signals = 1;
  rec.header.n_data_records = 1;
  Channel ch;
  ch.spec.label = "x";
  ch.spec.physical_min = -10;
  ch.spec.physical_max = 10;
  ch.spec.samples_per_record = 2;
  ch.spec.sample_rate_hz = 2.0;
  ch.samples = {1.0f, 11.0f};
  rec.channels.push_back(ch);
  CHECK_THROWS_AS(write_edf(rec), RangeOverflow);
}

namespace {

MultiChannelRecord random_record(uint64_t seed) {
  CounterRng rng(seed);
  MultiChannelRecord rec;
  rec.header.patient_id = "patient " + std::to_string(seed);
  rec.header.recording_id = "rec " + std::to_string(seed);
  rec.header.start_datetime = {1985 + static_cast<int>(rng.next_below(60)),
                               1 + static_cast<int>(rng.next_below(12)),
                               1 + static_cast<int>(rng.next_below(28)),
                               static_cast<int>(rng.next_below(24)),
                               static_cast<int>(rng.next_below(60)),
                               static_cast<int>(rng.next_below(60))};
  rec.header.n_data_records = 1 + static_cast<long>(rng.next_below(4));
  rec.header.record_duration_s = 1.0 + static_cast<double>(rng.next_below(3));
  rec.header.n_signals = 1 + rng.next_below(4);
  for (size_t c = 0; c < rec.header.n_signals; ++c) {
    Channel ch;
    ch.spec.label = "sig " + std::to_string(c);
    ch.spec.physical_dim = c % 2 ? "uV" : "mV";
    ch.spec.physical_min = -static_cast<double>(1 + rng.next_below(500));
    ch.spec.physical_max = static_cast<double>(1 + rng.next_below(500));
    ch.spec.digital_min = -static_cast<int>(1 + rng.next_below(30000));
    ch.spec.digital_max = static_cast<int>(1 + rng.next_below(30000));
    ch.spec.samples_per_record = 1 + rng.next_below(40);
    ch.spec.sample_rate_hz =
        static_cast<double>(ch.spec.samples_per_record) / rec.header.record_duration_s;
    const size_t n = static_cast<size_t>(rec.header.n_data_records) * ch.spec.samples_per_record;
    for (size_t i = 0; i < n; ++i)
      ch.samples.push_back(static_cast<float>(
          rng.next_uniform(ch.spec.physical_min, ch.spec.physical_max)));
    rec.channels.push_back(std::move(ch));
  }
  return rec;
}

void check_round_trip(const MultiChannelRecord& rec) {
  const MultiChannelRecord back = parse_edf(write_edf(rec));
  CHECK(back.header.patient_id == rec.header.patient_id);
  CHECK(back.header.recording_id == rec.header.recording_id);
  CHECK(back.header.start_datetime == rec.header.start_datetime);
  CHECK(back.header.n_data_records == rec.header.n_data_records);
  CHECK(back.header.record_duration_s == rec.header.record_duration_s);
  CHECK(back.header.n_signals == rec.header.n_signals);
  REQUIRE(back.channels.size() == rec.channels.size());
  for (size_t c = 0; c < rec.channels.size(); ++c) {
    const ChannelSpec& a = rec.channels[c].spec;
    const ChannelSpec& b = back.channels[c].spec;
    CHECK(b.label == a.label);
    CHECK(b.physical_dim == a.physical_dim);
    CHECK(b.physical_min == a.physical_min);
    CHECK(b.physical_max == a.physical_max);
    CHECK(b.digital_min == a.digital_min);
    CHECK(b.digital_max == a.digital_max);
    CHECK(b.samples_per_record == a.samples_per_record);
    const double quantum = (a.physical_max - a.physical_min) /
                           (static_cast<double>(a.digital_max) - a.digital_min);
    for (size_t i = 0; i < rec.channels[c].samples.size(); ++i) {
      const double err = std::fabs(static_cast<double>(back.channels[c].samples[i]) -
                                   static_cast<double>(rec.channels[c].samples[i]));
      REQUIRE(err <= std::fabs(quantum) * (1.0 + 1e-6));
    }
  }
}

}  // namespace

TEST_CASE("parse(write(r)) round trip on randomized records") {
  for (uint64_t seed = 0; seed < 20; ++seed) check_round_trip(random_record(seed));
}

TEST_CASE("EDF+ hypnogram: single long wake annotation expands to 60 epochs") {
  const auto bytes = testutil::build_hypnogram_edf(testutil::tal(0, 1800, "Sleep stage W"));
  const StageAnnotations ann = parse_hypnogram(bytes, HypnogramFormat::edfplus_annotations);
  REQUIRE(ann.entries.size() == 1);
  CHECK(ann.entries[0].onset_s == 0.0);
  CHECK(ann.entries[0].duration_s == 1800.0);
  CHECK(ann.entries[0].stage == AnnStage::W);
  const auto labels = expand_to_epochs(ann);
  CHECK(labels.size() == 60);
  for (AnnStage s : labels) CHECK(s == AnnStage::W);
}

TEST_CASE("EDF+ hypnogram: multiple annotations, N4 merge, unknown token") {
  SUBCASE("sequence with merges") {
    const auto bytes = testutil::build_hypnogram_edf(
        testutil::tal(0, 30, "Sleep stage W") + testutil::tal(30, 60, "Sleep stage 4") +
        testutil::tal(90, 30, "Sleep stage R") + testutil::tal(120, 30, "Movement time") +
        testutil::tal(150, 30, "Sleep stage ?"));
    const StageAnnotations ann = parse_hypnogram(bytes, HypnogramFormat::edfplus_annotations);
    REQUIRE(ann.entries.size() == 5);
    CHECK(ann.entries[1].stage == AnnStage::N3);  // AASM merge of stage 4
    CHECK(ann.entries[2].stage == AnnStage::REM);
    CHECK(ann.entries[3].stage == AnnStage::MOVEMENT);
    CHECK(ann.entries[4].stage == AnnStage::UNKNOWN);
    const auto labels = expand_to_epochs(ann);
    REQUIRE(labels.size() == 6);
    CHECK(labels[1] == AnnStage::N3);
    CHECK(labels[2] == AnnStage::N3);
  }
  SUBCASE("unknown stage text") {
    const auto bytes = testutil::build_hypnogram_edf(testutil::tal(0, 30, "Sleep stage X"));
    CHECK_THROWS_AS(parse_hypnogram(bytes, HypnogramFormat::edfplus_annotations),
                    UnknownStageToken);
  }
  SUBCASE("overlapping entries") {
    const auto bytes = testutil::build_hypnogram_edf(testutil::tal(0, 60, "Sleep stage W") +
                                                     testutil::tal(30, 30, "Sleep stage 1"));
    CHECK_THROWS_AS(parse_hypnogram(bytes, HypnogramFormat::edfplus_annotations),
                    OverlappingEntries);
  }
  SUBCASE("timekeeping TALs are skipped") {
    std::string stream = "+0";
    stream += '\x14';
    stream += '\x14';
    stream += '\0';
    stream += testutil::tal(0, 30, "Sleep stage 2");
    const StageAnnotations ann =
        parse_hypnogram(testutil::build_hypnogram_edf(stream), HypnogramFormat::edfplus_annotations);
    REQUIRE(ann.entries.size() == 1);
    CHECK(ann.entries[0].stage == AnnStage::N2);
  }
}

TEST_CASE("ISRUC epoch list mapping") {
  const std::string text = "0 0 2 5\n";
  const StageAnnotations ann = parse_hypnogram(
      {reinterpret_cast<const uint8_t*>(text.data()), text.size()},
      HypnogramFormat::isruc_epoch_list);
  REQUIRE(ann.entries.size() == 4);
  const AnnStage expect[] = {AnnStage::W, AnnStage::W, AnnStage::N2, AnnStage::REM};
  for (size_t i = 0; i < 4; ++i) {
    CHECK(ann.entries[i].stage == expect[i]);
    CHECK(ann.entries[i].onset_s == 30.0 * static_cast<double>(i));
    CHECK(ann.entries[i].duration_s == 30.0);
  }

  const std::string bad = "0 7\n";
  CHECK_THROWS_AS(parse_hypnogram({reinterpret_cast<const uint8_t*>(bad.data()), bad.size()},
                                  HypnogramFormat::isruc_epoch_list),
                  UnknownStageToken);
}

TEST_CASE("hypnogram expansion yields floor(total/30) labels for multiple-of-30 entries") {
  CounterRng rng(42);
  for (int trial = 0; trial < 25; ++trial) {
    StageAnnotations ann;
    double t = 0.0;
    double total = 0.0;
    const size_t n = 1 + rng.next_below(8);
    for (size_t i = 0; i < n; ++i) {
      const double dur = 30.0 * static_cast<double>(1 + rng.next_below(5));
      ann.entries.push_back(
          {t, dur, static_cast<AnnStage>(rng.next_below(4))});
      t += dur;
      total += dur;
    }
    CHECK(expand_to_epochs(ann).size() == static_cast<size_t>(total / 30.0));
  }
}

TEST_CASE("select_channels reorders, drops and validates") {
  testutil::RawChannel a, b, c;
  a.label = "EEG Fpz-Cz";
  a.samples_per_record = 4;
  a.digital = {1, 2, 3, 4};
  b.label = "EOG horizontal";
  b.samples_per_record = 4;
  b.digital = {5, 6, 7, 8};
  c.label = "marker";
  c.samples_per_record = 1;  // 1 Hz, differs from the 4 Hz EEG channels
  c.digital = {9};
  const MultiChannelRecord rec = parse_edf(testutil::build_edf_bytes({a, b, c}, 1));

  SUBCASE("identity selection fixes the order") {
    const MultiChannelRecord sel = select_channels(rec, {"EOG horizontal", "EEG Fpz-Cz"});
    REQUIRE(sel.channels.size() == 2);
    CHECK(sel.header.n_signals == 2);
    CHECK(sel.channels[0].spec.label == "EOG horizontal");
    CHECK(sel.channels[1].spec.label == "EEG Fpz-Cz");
    // retained traces are bitwise equal
    CHECK(sel.channels[0].samples == rec.channels[1].samples);
    CHECK(sel.channels[1].samples == rec.channels[0].samples);
  }
  SUBCASE("missing channel") {
    CHECK_THROWS_AS(select_channels(rec, {"C3-A2"}), MissingChannel);
  }
  SUBCASE("mixed sample rates") {
    CHECK_THROWS_AS(select_channels(rec, {"EEG Fpz-Cz", "marker"}), MixedSampleRate);
  }
}
