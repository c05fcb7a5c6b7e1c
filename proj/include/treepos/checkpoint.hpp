#pragma once

#include <map>
#include <string>

#include "treepos/encoder.hpp"

#include "json.hpp"

namespace treepos {

// Single-file checkpoint: 8-byte magic, u32 version, length-prefixed config
// JSON, then named parameter blobs (name, shape, raw little-endian float32
// data). Round-trips bit-exactly.
struct Checkpoint {
    nlohmann::json config;
    std::map<std::string, Tensor<float>> params;
};

void save_checkpoint(const std::string& path, const nlohmann::json& config,
                     const ParamStore<float>& params);

Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint blobs into an existing store; throws on missing names or
// shape mismatches.
void load_into(ParamStore<float>& store, const Checkpoint& ck);

}  // namespace treepos
