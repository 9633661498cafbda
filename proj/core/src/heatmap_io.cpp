#include "tve/heatmap_io.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tve/checkpoint.hpp"

namespace tve {

using nlohmann::ordered_json;

void write_heatmap_json(const std::filesystem::path& path, const ExplanationHeatmap& hm,
                        const GridSpec& grid) {
    hm.validate(grid);
    ordered_json j;
    j["grid"] = grid_to_json(grid);
    j["class"] = hm.label;
    j["provenance"] = to_string(hm.provenance);
    j["values"] = hm.values.data();
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write heatmap " + path.string());
    out << j.dump(2) << "\n";
}

ExplanationHeatmap read_heatmap_json(const std::filesystem::path& path, GridSpec* grid_out) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read heatmap " + path.string());
    ordered_json j = ordered_json::parse(in);
    const GridSpec grid = grid_from_json(j.at("grid"));
    ExplanationHeatmap hm;
    hm.label = j.at("class").get<int64_t>();
    hm.provenance = heatmap_provenance_from_string(j.at("provenance").get<std::string>());
    auto values = j.at("values").get<std::vector<float>>();
    hm.values = Tensor::from_data({grid.patches_per_side, grid.patches_per_side},
                                  std::move(values));
    hm.validate(grid);
    if (grid_out) *grid_out = grid;
    return hm;
}

void write_heatmap_pgm(const std::filesystem::path& path, const ExplanationHeatmap& hm) {
    const int64_t P = hm.values.dims()[0];
    const auto& v = hm.values.data();
    float lo = v[0], hi = v[0];
    for (float x : v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    const float span = hi - lo;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write PGM " + path.string());
    out << "P5\n" << P << " " << P << "\n255\n";
    for (float x : v) {
        const int byte = span > 0.0f ? int(std::lround(255.0 * double(x - lo) / double(span))) : 0;
        out.put(char(std::clamp(byte, 0, 255)));
    }
}

void write_heatmap(const std::filesystem::path& stem, const ExplanationHeatmap& hm,
                   const GridSpec& grid) {
    std::filesystem::path json_path = stem;
    json_path += ".json";
    std::filesystem::path pgm_path = stem;
    pgm_path += ".pgm";
    write_heatmap_json(json_path, hm, grid);
    write_heatmap_pgm(pgm_path, hm);
}

} // namespace tve
