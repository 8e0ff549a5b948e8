#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pcs/tensor.hpp"

namespace pcs {

/// Container file: a text header followed by raw little-endian float32
/// payloads.
///
///   PCSCKPT 1
///   meta <bytes>
///   <meta text>
///   tensors <count>
///   <name> <offset> <ndim> <d0> ... <dn-1>
///   end
///   <payload>
///
/// Offsets are byte offsets into the payload. Tensor names may not contain
/// whitespace. Round-trips are bit-exact.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  std::string meta;  // free-form text, JSON by convention
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  void add(std::string name, const Tensor& tensor);
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace pcs
