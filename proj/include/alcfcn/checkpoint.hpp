#pragma once

// Checkpoint file layout:
//   uint64 little-endian header length N
//   N bytes of JSON header: {"format_version", "metadata", "tensors": [
//       {"name", "shape", "dtype": "F32", "offset", "nbytes"}, ...]}
//   raw little-endian float32 payloads in header order; offsets are relative
//   to the start of the payload section.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "alcfcn/param_store.hpp"

namespace alcfcn {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  ParamStore<float> params;
  nlohmann::json metadata;
};

void save_checkpoint(const std::filesystem::path& path, const ParamStore<float>& params,
                     const nlohmann::json& metadata);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Stable 64-bit FNV-1a digest of a file, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

}  // namespace alcfcn
