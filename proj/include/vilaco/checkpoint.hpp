#pragma once

// Versioned binary container used for model checkpoints and pre-trained
// encoder weights.
//
// Layout (little-endian):
//   "VILACOCK" | u32 version
//   u32 n_meta    { str key, str value }
//   u32 n_tensor  { str name, u64 rows, u64 cols, f64[rows*cols] }
//   u32 n_bytes   { str name, u64 size, u8[size] }
//   u64 fnv1a of everything above
// where str = u32 length + bytes.

#include "vilaco/autograd.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace vilaco {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct BlobFile {
  std::uint32_t version = kCheckpointVersion;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, ag::Matrix>> tensors;
  std::vector<std::pair<std::string, std::string>> bytes;

  const ag::Matrix* tensor(const std::string& name) const;
  const std::string* blob(const std::string& name) const;
  const std::string& meta_value(const std::string& key) const;  // throws CheckpointError
};

void write_blob_file(const std::filesystem::path& path, const BlobFile& file);
BlobFile read_blob_file(const std::filesystem::path& path);

}  // namespace vilaco
