#include "ptl/nn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <sstream>

#include "ptl/error.hpp"

namespace ptl::nn {

namespace {

using json = nlohmann::json;

template <typename T>
T to_little_endian(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

void append_raw(std::string& out, const void* p, std::size_t n) { out.append(static_cast<const char*>(p), n); }

}  // namespace

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors, const std::map<std::string, std::string>& metadata) {
  json header = json::object();
  std::string payload;
  for (const auto& [name, tensor] : tensors) {
    if (name == "__metadata__" || header.contains(name)) throw std::invalid_argument("checkpoint: duplicate or reserved name " + name);
    const std::size_t begin = payload.size();
    for (Scalar v : tensor->values()) {
      const auto bits = to_little_endian(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      append_raw(payload, &bits, sizeof bits);
    }
    header[name] = {{"dtype", "F32"}, {"shape", tensor->shape()}, {"data_offsets", {begin, payload.size()}}};
  }
  if (!metadata.empty()) header["__metadata__"] = metadata;
  std::string head = header.dump();
  // Pad so the data section starts 8-byte aligned.
  while ((head.size() + 8) % 8 != 0) head.push_back(' ');
  const auto len = to_little_endian(static_cast<std::uint64_t>(head.size()));
  std::string out;
  out.reserve(8 + head.size() + payload.size());
  append_raw(out, &len, sizeof len);
  out += head;
  out += payload;
  return out;
}

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const std::map<std::string, std::string>& metadata) {
  const std::string bytes = encode_checkpoint(tensors, metadata);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing checkpoint " + path);
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8) throw DataError("checkpoint: truncated header");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data(), 8);
  len = to_little_endian(len);
  if (len > bytes.size() - 8) throw DataError("checkpoint: header length exceeds file size");
  json header;
  try {
    header = json::parse(bytes.substr(8, len));
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: bad header: ") + e.what());
  }
  const std::size_t data_start = 8 + len;
  const std::size_t data_size = bytes.size() - data_start;
  Checkpoint ck;
  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") {
      for (const auto& [k, v] : entry.items()) ck.metadata[k] = v.get<std::string>();
      continue;
    }
    if (entry.value("dtype", "") != "F32") throw DataError("checkpoint: unsupported dtype for " + name);
    const auto shape = entry.at("shape").get<std::vector<int>>();
    const auto offsets = entry.at("data_offsets").get<std::vector<std::size_t>>();
    if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > data_size)
      throw DataError("checkpoint: bad offsets for " + name);
    Tensor t(shape);
    if ((offsets[1] - offsets[0]) != t.size() * 4) throw DataError("checkpoint: size mismatch for " + name);
    const char* src = bytes.data() + data_start + offsets[0];
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::uint32_t bits = 0;
      std::memcpy(&bits, src + 4 * i, 4);
      t[i] = std::bit_cast<float>(to_little_endian(bits));
    }
    ck.tensors.emplace(name, std::move(t));
  }
  return ck;
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace ptl::nn
