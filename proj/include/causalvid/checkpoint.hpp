#pragma once

#include "causalvid/model.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace causalvid {

struct NamedArray {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
};

// On-disk layout:
//   "CVCK" | u32 version | u32 manifest_bytes | manifest text | payload
// The manifest holds "meta <key> <value>" and
// "array <name> <d0>[x<d1>] <offset> <count>" lines; offsets and counts are
// in elements of the little-endian float32 payload.
struct CheckpointData {
    std::map<std::string, std::string> meta;
    std::vector<NamedArray> arrays;

    const NamedArray* find(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& ckpt);
CheckpointData read_checkpoint(const std::filesystem::path& path);

// Model parameters plus its configuration under "model.*" meta keys.
CheckpointData model_checkpoint(const CausalVideoTransformer& model);
CausalVideoTransformer model_from_checkpoint(const CheckpointData& ckpt);

std::map<std::string, std::string> model_config_to_map(const ModelConfig& cfg);
ModelConfig model_config_from_map(const std::map<std::string, std::string>& kv, const ModelConfig& base = {});

}  // namespace causalvid
