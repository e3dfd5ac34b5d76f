#pragma once

#include <string>
#include <utility>
#include <vector>

#include "smetod/tensor.hpp"

namespace smetod {

// Checkpoint container: "SMET" magic, u32 format version, a canonical-text
// config echo, a manifest of (name, shape, byte offset) entries, then the
// little-endian f64 buffers. All integers little-endian.

inline constexpr char kCheckpointMagic[4] = {'S', 'M', 'E', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LoadedCheckpoint {
    std::string config_text;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const std::string& path, const std::string& config_text,
                     std::span<const std::pair<std::string, Tensor>> tensors);

LoadedCheckpoint load_checkpoint(const std::string& path);

} // namespace smetod
