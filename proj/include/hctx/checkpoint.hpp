#pragma once

#include <string>
#include <vector>

#include "hctx/model.hpp"

namespace hctx {

// Binary checkpoint: magic "HCTX", u32 format version, canonical JSON
// config block, then named tensor records (name length + name + dtype tag
// [1=f32, 2=f64] + rank + extents + raw little-endian values). Memory
// banks are stored as tensors named "layer{i}.memory" with an occupancy
// sidecar tensor per layer.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

void save_checkpoint(const std::string& path, const Model& model,
                     const std::vector<MemoryBank>& banks);

struct LoadedCheckpoint {
    Model model;
    std::vector<MemoryBank> banks;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace hctx
