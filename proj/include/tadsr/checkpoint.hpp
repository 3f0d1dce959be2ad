#pragma once

#include <filesystem>

#include "json.hpp"
#include "tadsr/params.hpp"

namespace tadsr {

/// On-disk layout of a checkpoint directory:
///   manifest.json  ordered [{name, dtype: "f32", shape, offset, length}], offset and length in bytes
///   weights.bin    little-endian float32 payloads concatenated in manifest order
///   config.json    {"arch": ..., plus the caller's metadata}
struct Checkpoint {
    ParamStore store;
    nlohmann::json config;
};

/// Writes into a sibling temporary directory, then renames it over `dir`.
void save_checkpoint(const std::filesystem::path& dir, const ParamStore& store, nlohmann::json config);
Checkpoint load_checkpoint(const std::filesystem::path& dir);
bool checkpoint_exists(const std::filesystem::path& dir);

nlohmann::json arch_to_json(const ArchDescriptor& arch);
ArchDescriptor arch_from_json(const nlohmann::json& j);

}  // namespace tadsr
