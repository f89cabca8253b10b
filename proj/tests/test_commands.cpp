#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssnet/commands.hpp"
#include "ssnet/metrics.hpp"
#include "ssnet/shards.hpp"
#include "testutil.hpp"

using namespace ssnet;
using namespace ssnet::cli;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / ("ssnet_cmds_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const char* sub) const { return (path / sub).string(); }
};

// fixed 4-channel fixture in the Sleep-EDFX channel layout
std::vector<uint8_t> fixture_edf_bytes() {
  std::vector<testutil::RawChannel> chans(4);
  const char* labels[] = {"EEG Fpz-Cz", "EEG Pz-Oz", "EOG horizontal", "EMG submental"};
  for (size_t c = 0; c < 4; ++c) {
    chans[c].label = labels[c];
    chans[c].dim = "uV";
    chans[c].phys_min = "-250";
    chans[c].phys_max = "250";
    chans[c].samples_per_record = 100;
    for (size_t i = 0; i < 200; ++i)
      chans[c].digital.push_back(static_cast<int16_t>((i * (c + 3)) % 401 - 200));
  }
  return testutil::build_edf_bytes(chans, 2, "1", "fixture patient", "fixture recording");
}

ExperimentConfig config_from(const nlohmann::json& j) { return ExperimentConfig::from_json(j); }

nlohmann::json synth_experiment(const TempDir& dir, uint64_t seed_data = 11) {
  // desk-scale synthetic shards as the prepare input
  SynthArgs args;
  args.stages = {data::Stage::W, data::Stage::N3, data::Stage::REM};
  args.n_per_class = 10;
  args.n_channels = 2;
  args.sample_rate_hz = 100.0;
  args.noise_sigma = 0.05;
  args.seed = 7;
  args.scheme = data::LabelScheme::three();
  args.out_dir = dir.str("pool");
  std::ostringstream sink;
  cmd_synth(args, sink);

  nlohmann::json j;
  j["inputs"] = {{"shards", dir.str("pool")}};
  j["scheme"] = "three";
  j["normalize"] = true;
  j["out_dir"] = dir.str("data");
  j["seeds"] = {{"data", seed_data}, {"init", 22}, {"train", 33}};
  j["precision"] = "f64";
  j["model"] = {{"cnn_maps", {4, 3}}, {"cnn_kernels", {3, 3}}, {"lstm_sizes", {6, 4}}};
  j["hyper"] = {{"batch_size", 8}, {"max_epochs", 2}, {"seed", 33}};
  return j;
}

}  // namespace

TEST_CASE("inspect: golden inventory for a fixed fixture is byte-stable") {
  TempDir dir;
  const std::string edf_path = dir.str("golden.edf");
  edf::write_file(edf_path, fixture_edf_bytes());

  const nlohmann::json inv = inspect_inventory(edf_path);
  REQUIRE(inv["channels"].size() == 4);
  CHECK(inv["channels"][0]["label"] == "EEG Fpz-Cz");
  CHECK(inv["channels"][0]["sample_rate_hz"] == 100.0);
  CHECK(inv["header"]["n_data_records"] == 2);

  const std::string rendered = inv.dump(2) + "\n";
  std::ifstream golden(std::string(SSNET_TEST_DATA_DIR) + "/golden_inventory.json");
  REQUIRE_MESSAGE(golden.good(), "golden_inventory.json fixture missing");
  std::stringstream want;
  want << golden.rdbuf();
  CHECK(rendered == want.str());

  // a second parse of the same bytes renders identically
  const nlohmann::json again = inspect_inventory(edf_path);
  CHECK(again.dump(2) + "\n" == rendered);
}

TEST_CASE("inspect: missing file raises a clear data error") {
  CHECK_THROWS_AS(inspect_inventory("/nonexistent/nothing.edf"), DataError);
}

TEST_CASE("cmd_inspect renders both formats") {
  TempDir dir;
  const std::string edf_path = dir.str("golden.edf");
  edf::write_file(edf_path, fixture_edf_bytes());
  std::ostringstream json_out, table_out;
  cmd_inspect(edf_path, "json", json_out);
  CHECK(nlohmann::json::parse(json_out.str())["channels"].size() == 4);
  cmd_inspect(edf_path, "table", table_out);
  CHECK(table_out.str().find("EOG horizontal") != std::string::npos);
}

TEST_CASE("prepare -> train -> eval compose on one config") {
  TempDir dir;
  const nlohmann::json base = synth_experiment(dir);
  std::ostringstream sink;

  cmd_prepare(config_from(base), sink);
  for (const char* part : {"train", "val", "test"})
    CHECK(fs::exists(dir.path / "data" / part / "manifest.json"));

  const nlohmann::json train_manifest =
      data::read_manifest((dir.path / "data" / "train").string());
  CHECK(train_manifest["normalized"] == true);
  CHECK(train_manifest["label_scheme"] == "three_class");
  CHECK(train_manifest.contains("config_sha256"));
  CHECK(train_manifest["seeds"]["data"] == 11);

  // z-score contract holds on exported shards
  const data::EpochSet train_set = data::import_shards((dir.path / "data" / "train").string());
  for (const data::Epoch& e : train_set.epochs) {
    const size_t len = train_set.epoch_len;
    for (size_t c = 0; c < train_set.n_channels; ++c) {
      double mean = 0;
      for (size_t i = 0; i < len; ++i) mean += e.samples[c * len + i];
      mean /= static_cast<double>(len);
      CHECK(std::fabs(mean) < 1e-6);
    }
  }

  nlohmann::json train_cfg = base;
  train_cfg["inputs"] = {{"shards", dir.str("data")}};
  train_cfg["out_dir"] = dir.str("run");
  cmd_train(config_from(train_cfg), "", sink);
  CHECK(fs::exists(dir.path / "run" / "model.ckpt"));
  CHECK(fs::exists(dir.path / "run" / "last.ckpt"));
  const nlohmann::json history =
      nlohmann::json::parse(std::ifstream(dir.path / "run" / "history.json"));
  CHECK(history["train_loss"].size() == 2);
  CHECK(history["provenance"].contains("config_sha256"));

  cmd_eval((dir.path / "run" / "model.ckpt").string(), (dir.path / "data" / "test").string(),
           dir.str("report"), sink);
  CHECK(fs::exists(dir.path / "report" / "confusion.csv"));
  CHECK(fs::exists(dir.path / "report" / "metrics.csv"));
  const nlohmann::json metrics =
      nlohmann::json::parse(std::ifstream(dir.path / "report" / "metrics.json"));
  CHECK(metrics["rows"].size() == 4);  // 3 classes + average
  CHECK(metrics.contains("kappa_multiclass"));

  // metrics.csv has classes+1 rows after the header
  std::ifstream csv(dir.path / "report" / "metrics.csv");
  std::string line;
  size_t lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 3 + 2);

  SUBCASE("report re-renders the saved metrics") {
    std::ostringstream table;
    cmd_report((dir.path / "report" / "metrics.json").string(), "table", table);
    CHECK(table.str().find("Average") != std::string::npos);
    // json -> parse -> render is idempotent
    std::ostringstream rendered;
    cmd_report((dir.path / "report" / "metrics.json").string(), "json", rendered);
    const nlohmann::json a = nlohmann::json::parse(rendered.str());
    const nlohmann::json b =
        nlohmann::json::parse(std::ifstream(dir.path / "report" / "metrics.json"));
    CHECK(a["rows"] == b["rows"]);
    CHECK(a["confusion"] == b["confusion"]);
  }
  SUBCASE("eval with mismatched geometry fails") {
    SynthArgs args;
    args.stages = {data::Stage::W, data::Stage::N3, data::Stage::REM};
    args.n_per_class = 4;
    args.n_channels = 3;  // model expects 2
    args.sample_rate_hz = 100.0;
    args.seed = 9;
    args.scheme = data::LabelScheme::three();
    args.out_dir = dir.str("badpool");
    cmd_synth(args, sink);
    CHECK_THROWS_AS(cmd_eval((dir.path / "run" / "model.ckpt").string(), dir.str("badpool"),
                             dir.str("badreport"), sink),
                    ShapeMismatch);
  }
  SUBCASE("resume continues from the last checkpoint") {
    nlohmann::json resume_cfg = train_cfg;
    resume_cfg["out_dir"] = dir.str("run2");
    resume_cfg["hyper"]["max_epochs"] = 3;
    cmd_train(config_from(resume_cfg), (dir.path / "run" / "last.ckpt").string(), sink);
    const nlohmann::json h2 =
        nlohmann::json::parse(std::ifstream(dir.path / "run2" / "history.json"));
    CHECK(h2["train_loss"].size() == 3);
    // first two epochs are the original run's history
    CHECK(h2["train_loss"][0] == history["train_loss"][0]);
    CHECK(h2["train_loss"][1] == history["train_loss"][1]);
  }
}

TEST_CASE("prepare consumes EDF recordings with hypnograms") {
  TempDir dir;
  // two channels at 10 Hz, 300 s -> ten 30-s epochs
  std::vector<testutil::RawChannel> chans(2);
  CounterRng rng(3);
  for (size_t c = 0; c < 2; ++c) {
    chans[c].label = c == 0 ? "EEG Fpz-Cz" : "EOG horizontal";
    chans[c].samples_per_record = 10;
    for (size_t i = 0; i < 3000; ++i)
      chans[c].digital.push_back(static_cast<int16_t>(rng.next_below(2000)) - 1000);
  }
  edf::write_file(dir.str("night.edf"), testutil::build_edf_bytes(chans, 300));
  std::string tals;
  const char* stages[] = {"Sleep stage W", "Sleep stage 1", "Sleep stage 2", "Sleep stage 3",
                          "Sleep stage R"};
  for (size_t i = 0; i < 10; ++i)
    tals += testutil::tal(30.0 * static_cast<double>(i), 30, stages[i % 5]);
  edf::write_file(dir.str("night-hyp.edf"), testutil::build_hypnogram_edf(tals));

  nlohmann::json j;
  j["inputs"] = {{"recordings", nlohmann::json::array({{{"edf", dir.str("night.edf")},
                                                        {"hypnogram", dir.str("night-hyp.edf")},
                                                        {"format", "edfplus_annotations"}}})},
                 {"channels", {"EEG Fpz-Cz", "EOG horizontal"}}};
  j["scheme"] = "five";
  j["out_dir"] = dir.str("data");
  j["seeds"] = {{"data", 5}, {"init", 1}, {"train", 1}};
  std::ostringstream sink;
  cmd_prepare(config_from(j), sink);

  const nlohmann::json manifest = data::read_manifest((dir.path / "data" / "train").string());
  CHECK(manifest["source_recordings"][0]["hypnogram"] == dir.str("night-hyp.edf"));
  size_t total = 0;
  for (const char* part : {"train", "val", "test"})
    total += data::import_shards((dir.path / "data" / part).string()).size();
  CHECK(total == 10);
}

TEST_CASE("prepare is deterministic: same seeds give identical shard checksums") {
  TempDir dir;
  const nlohmann::json base = synth_experiment(dir);
  std::ostringstream sink;

  nlohmann::json a = base;
  a["out_dir"] = dir.str("data_a");
  nlohmann::json b = base;
  b["out_dir"] = dir.str("data_b");
  cmd_prepare(config_from(a), sink);
  cmd_prepare(config_from(b), sink);
  for (const char* part : {"train", "val", "test"}) {
    const nlohmann::json ma = data::read_manifest((dir.path / "data_a" / part).string());
    const nlohmann::json mb = data::read_manifest((dir.path / "data_b" / part).string());
    CHECK(ma["shards"] == mb["shards"]);
    CHECK(ma["counts"] == mb["counts"]);
  }

  nlohmann::json c = base;
  c["out_dir"] = dir.str("data_c");
  c["seeds"]["data"] = 999;
  cmd_prepare(config_from(c), sink);
  const nlohmann::json ma = data::read_manifest((dir.path / "data_a" / "train").string());
  const nlohmann::json mc = data::read_manifest((dir.path / "data_c" / "train").string());
  CHECK(ma["shards"] != mc["shards"]);
}

TEST_CASE("prepare propagates undersampling errors") {
  TempDir dir;
  nlohmann::json cfg = synth_experiment(dir);
  cfg["undersample"] = {{"targets", {{"W", 100}}}};  // only 12 available
  std::ostringstream sink;
  CHECK_THROWS_AS(cmd_prepare(config_from(cfg), sink), TargetExceedsAvailable);
}

TEST_CASE("config parsing, overrides and hashing") {
  TempDir dir;
  const std::string path = dir.str("cfg.json");
  std::ofstream(path) << R"({"scheme": "five", "out_dir": "x", "seeds": {"data": 1}})";

  const ExperimentConfig plain = ExperimentConfig::load(path, nlohmann::json::object());
  CHECK(plain.scheme == data::LabelScheme::five());
  CHECK(plain.seed_data == 1);

  nlohmann::json overrides;
  overrides["scheme"] = "three";
  overrides["seeds"] = {{"data", 42}};
  const ExperimentConfig merged = ExperimentConfig::load(path, overrides);
  CHECK(merged.scheme == data::LabelScheme::three());
  CHECK(merged.seed_data == 42);
  CHECK(merged.config_hash() != plain.config_hash());  // hash covers the effective config
  CHECK(merged.provenance()["seeds"]["data"] == 42);

  std::ofstream(path) << "{not json";
  CHECK_THROWS_AS(ExperimentConfig::load(path, nlohmann::json::object()), UsageError);
}

TEST_CASE("gradcheck command reports per-layer errors and detects mutations") {
  std::ostringstream out;
  CHECK(cmd_gradcheck(3, false, out) == 0);
  CHECK(out.str().find("conv1d") != std::string::npos);
  CHECK(out.str().find("lstm_sequence_5step") != std::string::npos);
  CHECK(out.str().find("FAIL") == std::string::npos);

  std::ostringstream out2;
  CHECK(cmd_gradcheck(3, true, out2) == 0);  // self-test passes when the break is caught
  CHECK(out2.str().find("self-test ok") != std::string::npos);
}

TEST_CASE("exit codes map the error taxonomy") {
  CHECK(exit_code_for(UsageError("x")) == 1);
  CHECK(exit_code_for(MalformedHeader("x")) == 2);
  CHECK(exit_code_for(DivergedLoss("x")) == 3);
  CHECK(exit_code_for(std::runtime_error("x")) == 2);
}
