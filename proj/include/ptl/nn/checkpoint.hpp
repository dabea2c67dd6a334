#pragma once

#include <map>
#include <string>
#include <vector>

#include "ptl/nn/tensor.hpp"

namespace ptl::nn {

// Checkpoint file layout:
//   u64 little-endian header length N
//   N bytes of JSON: {"<name>": {"dtype": "F32", "shape": [...], "data_offsets": [begin, end]},
//                     "__metadata__": {"<key>": "<string>"}}
//   raw little-endian f32 data; offsets are relative to the end of the header.

struct NamedTensor {
  std::string name;
  const Tensor* tensor;
};

struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> metadata;
};

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors,
                     const std::map<std::string, std::string>& metadata = {});

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors,
                              const std::map<std::string, std::string>& metadata = {});

/// Throws ptl::DataError on malformed input.
Checkpoint load_checkpoint(const std::string& path);
Checkpoint decode_checkpoint(const std::string& bytes);

}  // namespace ptl::nn
