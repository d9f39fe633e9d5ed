#pragma once

// Checkpoint container: magic "CRNL1\n", a little-endian u64 manifest
// length, the JSON manifest, then one little-endian f32 blob per parameter
// in manifest order. Loading reproduces forward outputs bit-exactly at the
// stored (f32) precision.

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crnl/layers.hpp"

namespace crnl {

struct CheckpointData {
    nlohmann::json manifest;
    std::vector<std::pair<std::string, std::vector<float>>> blobs;
};

void save_checkpoint(const std::string& path, const nlohmann::json& model_meta, int64_t step,
                     const std::string& config_hash, const ParamList& params);

CheckpointData load_checkpoint(const std::string& path);

// copies blobs into params, matched by name, shapes checked
void apply_checkpoint(const CheckpointData& ckpt, const ParamList& params);

}  // namespace crnl
