#include "ssnet/serialize.hpp"

#include <openssl/evp.h>

#include <cstring>
#include <fstream>

#include "ssnet/errors.hpp"

namespace ssnet::io {

std::string sha256_hex(std::span<const uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

namespace {

template <typename T>
const char* dtype_name();
template <>
const char* dtype_name<float>() {
  return "f32";
}
template <>
const char* dtype_name<double>() {
  return "f64";
}

}  // namespace

template <typename T>
void TensorBlobWriter::add(const std::string& name, const nn::Tensor<T>& t) {
  if (index_.contains(name)) throw DataError("duplicate tensor name: " + name);
  nlohmann::json entry;
  entry["shape"] = t.shape();
  entry["dtype"] = dtype_name<T>();
  entry["offset"] = blob_.size();
  entry["count"] = t.size();
  index_[name] = std::move(entry);
  const size_t nbytes = t.size() * sizeof(T);
  const size_t off = blob_.size();
  blob_.resize(off + nbytes);
  std::memcpy(blob_.data() + off, t.data(), nbytes);
}

template void TensorBlobWriter::add<float>(const std::string&, const nn::Tensor<float>&);
template void TensorBlobWriter::add<double>(const std::string&, const nn::Tensor<double>&);

std::vector<std::string> TensorBlobReader::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : index_.items()) out.push_back(k);
  return out;
}

template <typename T>
nn::Tensor<T> TensorBlobReader::get(const std::string& name) const {
  if (!index_.contains(name)) throw DataError("tensor not in blob index: " + name);
  const nlohmann::json& entry = index_.at(name);
  if (entry.at("dtype").get<std::string>() != dtype_name<T>())
    throw DataError("tensor '" + name + "' has dtype " + entry.at("dtype").get<std::string>() +
                    ", requested " + dtype_name<T>());
  const auto shape = entry.at("shape").get<nn::Shape>();
  const auto offset = entry.at("offset").get<size_t>();
  const auto count = entry.at("count").get<size_t>();
  if (count != nn::shape_numel(shape) || offset + count * sizeof(T) > blob_.size())
    throw ChecksumMismatch("tensor '" + name + "' index inconsistent with blob");
  nn::Tensor<T> t(shape);
  std::memcpy(t.data(), blob_.data() + offset, count * sizeof(T));
  return t;
}

template nn::Tensor<float> TensorBlobReader::get<float>(const std::string&) const;
template nn::Tensor<double> TensorBlobReader::get<double>(const std::string&) const;

namespace {
constexpr char kMagic[8] = {'S', 'S', 'N', 'E', 'T', 'C', 'K', '1'};
}

void write_container(const std::string& path, nlohmann::json meta,
                     std::span<const uint8_t> blob) {
  meta["schema_version"] = kContainerSchemaVersion;
  meta["blob_sha256"] = sha256_hex(blob);
  const std::string meta_str = meta.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out.write(kMagic, sizeof(kMagic));
  const uint64_t len = meta_str.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size()));
  if (!out) throw DataError("write failed: " + path);
}

Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw SchemaVersionMismatch("not a ssnet container: " + path);
  uint64_t len = 0;
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len)))
    throw SchemaVersionMismatch("truncated container header: " + path);
  std::string meta_str(len, '\0');
  if (!in.read(meta_str.data(), static_cast<std::streamsize>(len)))
    throw SchemaVersionMismatch("truncated container metadata: " + path);
  Container c;
  try {
    c.meta = nlohmann::json::parse(meta_str);
  } catch (const nlohmann::json::exception&) {
    throw ChecksumMismatch("corrupt container metadata: " + path);
  }
  if (c.meta.value("schema_version", -1) != kContainerSchemaVersion)
    throw SchemaVersionMismatch("container schema version " +
                                std::to_string(c.meta.value("schema_version", -1)) +
                                " unsupported");
  c.blob.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  if (sha256_hex(c.blob) != c.meta.value("blob_sha256", ""))
    throw ChecksumMismatch("container blob checksum mismatch: " + path);
  return c;
}

}  // namespace ssnet::io
