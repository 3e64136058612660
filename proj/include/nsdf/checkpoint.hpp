#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "nsdf/trainer.hpp"

namespace nsdf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: "NSDF", u32 version, architecture, shape count,
/// parameter tensors (row-major), codebook, config echo, epoch, seed and an
/// optional optimizer block. All numbers little-endian; reals are binary64.
std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// 64-bit FNV-1a of the encoded checkpoint; identifies it in manifests.
std::uint64_t checkpoint_fingerprint(const Checkpoint& checkpoint);

}  // namespace nsdf
