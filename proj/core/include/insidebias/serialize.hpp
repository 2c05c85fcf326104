#pragma once

#include <filesystem>
#include <string>

#include "insidebias/model.hpp"

namespace insidebias::serialize {

// Weight-file layout (all integers little-endian):
//   magic "IBWF", u32 version (currently 1)
//   arch_id, input H/W/C (u32 x3), num_classes (u32), seed (u64)
//   u32 tensor count, then per tensor: name, u32 ndim, u32 dims[],
//   u64 payload offset, u32 CRC32 of the payload
//   payloads: raw float32 data at the recorded offsets
// Strings are u32 length + bytes. Documented in docs/weight-format.md.

inline constexpr std::uint32_t kWeightFormatVersion = 1;

void save_weights(Model& model, const std::filesystem::path& path);

/// Rebuild the architecture from the header and restore every parameter
/// bit-exactly. Throws BadMagicError / VersionMismatchError /
/// TruncatedFileError / ChecksumError (naming the tensor) on corrupt files,
/// and ArchMismatchError when `expected_arch` is non-empty and differs.
Model load_weights(const std::filesystem::path& path, const std::string& expected_arch = "");

/// CRC32 of an entire file, as 8 hex digits (used as the weight digest in
/// reports).
std::string file_crc32_hex(const std::filesystem::path& path);

}  // namespace insidebias::serialize
