#pragma once

#include <string>

#include <json.hpp>

#include "ssnet/dataset.hpp"

namespace ssnet::data {

constexpr int kShardSchemaVersion = 1;

// Writes the set as fixed-size binary blocks (little-endian float32 sample
// tensors plus flat label/provenance arrays) under `dir`, with a JSON
// manifest recording channels, sample rate, label scheme, normalization
// status, per-class counts and a SHA-256 per block. `extra` is merged into
// the manifest (seeds, config hash). Returns the manifest.
nlohmann::json export_shards(const EpochSet& set, const std::string& dir,
                             size_t epochs_per_shard = 4096,
                             const nlohmann::json& extra = nlohmann::json::object());

EpochSet import_shards(const std::string& dir);

nlohmann::json read_manifest(const std::string& dir);

}  // namespace ssnet::data
