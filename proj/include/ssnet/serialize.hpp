#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssnet/tensor.hpp"

namespace ssnet::io {

std::string sha256_hex(std::span<const uint8_t> bytes);

// Flat binary tensor blocks plus a JSON name/shape index. Little-endian
// float32/float64 payloads; shared between model manifests and trainer
// checkpoints.
class TensorBlobWriter {
 public:
  template <typename T>
  void add(const std::string& name, const nn::Tensor<T>& t);
  const std::vector<uint8_t>& blob() const { return blob_; }
  nlohmann::json index() const { return index_; }

 private:
  std::vector<uint8_t> blob_;
  nlohmann::json index_ = nlohmann::json::object();
};

class TensorBlobReader {
 public:
  TensorBlobReader(nlohmann::json index, std::span<const uint8_t> blob)
      : index_(std::move(index)), blob_(blob) {}
  bool has(const std::string& name) const { return index_.contains(name); }
  std::vector<std::string> names() const;
  template <typename T>
  nn::Tensor<T> get(const std::string& name) const;

 private:
  nlohmann::json index_;
  std::span<const uint8_t> blob_;
};

// Single-file container: magic, JSON metadata (with schema_version and a
// SHA-256 of the blob), then the blob. Load verifies both.
struct Container {
  nlohmann::json meta;
  std::vector<uint8_t> blob;
};

constexpr int kContainerSchemaVersion = 1;

void write_container(const std::string& path, nlohmann::json meta,
                     std::span<const uint8_t> blob);
Container read_container(const std::string& path);

}  // namespace ssnet::io
