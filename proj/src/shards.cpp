#include "ssnet/shards.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "ssnet/serialize.hpp"

namespace ssnet::data {

namespace fs = std::filesystem;

namespace {

constexpr char kShardMagic[8] = {'S', 'S', 'S', 'H', 'A', 'R', 'D', '1'};

void append_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

uint32_t read_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

std::vector<uint8_t> encode_shard(const EpochSet& set, size_t begin, size_t end) {
  const size_t n = end - begin;
  const size_t sample_bytes = set.n_channels * set.epoch_len * sizeof(float);
  std::vector<uint8_t> out;
  out.reserve(sizeof(kShardMagic) + 16 + n * (sample_bytes + 12));
  for (char c : kShardMagic) out.push_back(static_cast<uint8_t>(c));
  append_u32(out, static_cast<uint32_t>(n));
  append_u32(out, static_cast<uint32_t>(set.n_channels));
  append_u32(out, static_cast<uint32_t>(set.epoch_len));
  append_u32(out, 0);  // reserved
  // sample tensor block [n x channels x len] float32 LE
  for (size_t i = begin; i < end; ++i) {
    const size_t off = out.size();
    out.resize(off + sample_bytes);
    std::memcpy(out.data() + off, set.epochs[i].samples.data(), sample_bytes);
  }
  // flat label array, then provenance records
  for (size_t i = begin; i < end; ++i) out.push_back(static_cast<uint8_t>(set.epochs[i].stage));
  for (size_t i = begin; i < end; ++i) {
    append_u32(out, set.epochs[i].rec);
    append_u32(out, set.epochs[i].index);
  }
  return out;
}

}  // namespace

nlohmann::json export_shards(const EpochSet& set, const std::string& dir,
                             size_t epochs_per_shard, const nlohmann::json& extra) {
  if (epochs_per_shard == 0) throw InvalidConfig("epochs_per_shard must be positive");
  fs::create_directories(dir);

  nlohmann::json manifest;
  manifest["schema_version"] = kShardSchemaVersion;
  manifest["n_channels"] = set.n_channels;
  manifest["epoch_len"] = set.epoch_len;
  manifest["sample_rate_hz"] = set.sample_rate_hz;
  manifest["channels"] = set.channel_names;
  manifest["recording_ids"] = set.recording_ids;
  manifest["label_scheme"] = set.scheme.name();
  manifest["normalized"] = set.normalized;
  manifest["total"] = set.epochs.size();
  nlohmann::json counts = nlohmann::json::object();
  const auto names = set.scheme.class_names();
  const auto cc = set.class_counts();
  for (size_t c = 0; c < names.size(); ++c) counts[names[c]] = cc[c];
  manifest["counts"] = counts;
  manifest["epochs_per_shard"] = epochs_per_shard;

  nlohmann::json shards = nlohmann::json::array();
  for (size_t begin = 0, idx = 0; begin < set.epochs.size() || idx == 0;
       begin += epochs_per_shard, ++idx) {
    const size_t end = std::min(begin + epochs_per_shard, set.epochs.size());
    char name[32];
    std::snprintf(name, sizeof(name), "shard-%05zu.bin", idx);
    const std::vector<uint8_t> bytes = encode_shard(set, begin, end);
    edf::write_file((fs::path(dir) / name).string(), bytes);
    nlohmann::json entry;
    entry["file"] = name;
    entry["n_epochs"] = end - begin;
    entry["sha256"] = io::sha256_hex(bytes);
    shards.push_back(std::move(entry));
    if (end >= set.epochs.size()) break;
  }
  manifest["shards"] = shards;
  for (const auto& [k, v] : extra.items()) manifest[k] = v;

  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw DataError("cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
  return manifest;
}

nlohmann::json read_manifest(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw DataError("no manifest.json in " + dir);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid manifest in " + dir + ": " + e.what());
  }
  return manifest;
}

EpochSet import_shards(const std::string& dir) {
  const nlohmann::json manifest = read_manifest(dir);
  if (manifest.value("schema_version", -1) != kShardSchemaVersion)
    throw SchemaVersionMismatch("shard schema version " +
                                std::to_string(manifest.value("schema_version", -1)) +
                                " unsupported");
  EpochSet set;
  set.n_channels = manifest.at("n_channels").get<size_t>();
  set.epoch_len = manifest.at("epoch_len").get<size_t>();
  set.sample_rate_hz = manifest.at("sample_rate_hz").get<double>();
  set.channel_names = manifest.at("channels").get<std::vector<std::string>>();
  set.recording_ids = manifest.at("recording_ids").get<std::vector<std::string>>();
  set.scheme = LabelScheme::from_name(manifest.at("label_scheme").get<std::string>());
  set.normalized = manifest.value("normalized", false);

  const size_t sample_bytes = set.n_channels * set.epoch_len * sizeof(float);
  for (const nlohmann::json& entry : manifest.at("shards")) {
    const std::string file = entry.at("file").get<std::string>();
    const std::vector<uint8_t> bytes = edf::read_file((fs::path(dir) / file).string());
    if (io::sha256_hex(bytes) != entry.at("sha256").get<std::string>())
      throw ChecksumMismatch("shard checksum mismatch: " + file);
    if (bytes.size() < sizeof(kShardMagic) + 16 ||
        std::memcmp(bytes.data(), kShardMagic, sizeof(kShardMagic)) != 0)
      throw ChecksumMismatch("shard header corrupt: " + file);
    const uint8_t* p = bytes.data() + sizeof(kShardMagic);
    const size_t n = read_u32(p);
    const size_t n_ch = read_u32(p + 4);
    const size_t len = read_u32(p + 8);
    if (n_ch != set.n_channels || len != set.epoch_len)
      throw SchemaVersionMismatch("shard geometry disagrees with manifest: " + file);
    const size_t expect = sizeof(kShardMagic) + 16 + n * (sample_bytes + 1 + 8);
    if (bytes.size() != expect) throw ChecksumMismatch("shard size mismatch: " + file);

    const uint8_t* samples = bytes.data() + sizeof(kShardMagic) + 16;
    const uint8_t* labels = samples + n * sample_bytes;
    const uint8_t* prov = labels + n;
    for (size_t i = 0; i < n; ++i) {
      Epoch e;
      e.samples.resize(set.n_channels * set.epoch_len);
      std::memcpy(e.samples.data(), samples + i * sample_bytes, sample_bytes);
      if (labels[i] >= kNumStages) throw ChecksumMismatch("shard label corrupt: " + file);
      e.stage = static_cast<Stage>(labels[i]);
      e.rec = read_u32(prov + i * 8);
      e.index = read_u32(prov + i * 8 + 4);
      if (e.rec >= set.recording_ids.size())
        throw ChecksumMismatch("shard provenance corrupt: " + file);
      set.epochs.push_back(std::move(e));
    }
  }
  if (set.epochs.size() != manifest.at("total").get<size_t>())
    throw ChecksumMismatch("manifest total disagrees with shard contents");
  return set;
}

}  // namespace ssnet::data
