#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "wt/model.hpp"

namespace wt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Container layout, all integers little-endian:
//   "WTCK" | u32 version | u64 manifest bytes | UTF-8 JSON manifest |
//   binary32 payloads in manifest order
// The manifest holds the model config and, per tensor, its name, shape and
// offset (in values) into the payload.
std::string checkpoint_bytes(const Transformer& model);
Transformer checkpoint_from_bytes(const std::string& bytes);

void checkpoint_save(const Transformer& model, const std::filesystem::path& path);
Transformer checkpoint_load(const std::filesystem::path& path);

// Every parameter rounded to binary32, as a save/load round-trip would.
Transformer rounded_to_binary32(const Transformer& model);

}  // namespace wt
