#pragma once

#include <filesystem>

#include "tve/attribution.hpp"

namespace tve {

// Raw values as JSON {grid, class, provenance, values} plus an 8-bit
// min-max-normalized PGM (P5) render with the same stem.
void write_heatmap_json(const std::filesystem::path& path, const ExplanationHeatmap& hm,
                        const GridSpec& grid);
ExplanationHeatmap read_heatmap_json(const std::filesystem::path& path, GridSpec* grid_out = nullptr);

void write_heatmap_pgm(const std::filesystem::path& path, const ExplanationHeatmap& hm);

// Writes <stem>.json and <stem>.pgm.
void write_heatmap(const std::filesystem::path& stem, const ExplanationHeatmap& hm,
                   const GridSpec& grid);

} // namespace tve
