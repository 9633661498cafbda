#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tve/models.hpp"

namespace tve {

// Checkpoint directory: manifest.json naming every parameter (name, shape,
// file, sha256) plus the grid, seed, and architecture fields, and one TVET
// file per parameter. Loads verify hashes and shapes.
struct CheckpointMeta {
    std::string kind; // "backbone" | "head" | "explainer"
    uint64_t seed = 0;
    GridSpec grid;
    nlohmann::ordered_json arch;
};

void save_checkpoint(const std::filesystem::path& dir, const CheckpointMeta& meta,
                     const std::vector<NamedParam>& params);

struct LoadedCheckpoint {
    CheckpointMeta meta;
    std::vector<NamedParam> params;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

// Typed wrappers.
void save_backbone(const std::filesystem::path& dir, const BackboneEncoder& enc, uint64_t seed);
BackboneEncoder load_backbone(const std::filesystem::path& dir);

void save_head(const std::filesystem::path& dir, const ClassifierHead& head,
               const GridSpec& grid, uint64_t seed);
ClassifierHead load_head(const std::filesystem::path& dir);

nlohmann::ordered_json grid_to_json(const GridSpec& grid);
GridSpec grid_from_json(const nlohmann::ordered_json& j);

} // namespace tve
