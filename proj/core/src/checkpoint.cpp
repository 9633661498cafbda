#include "tve/checkpoint.hpp"

#include <fstream>

#include "tve/hash.hpp"
#include "tve/tensor_io.hpp"

namespace tve {

using nlohmann::ordered_json;

ordered_json grid_to_json(const GridSpec& grid) {
    return {{"W", grid.image_side},
            {"C", grid.patch_side},
            {"P", grid.patches_per_side},
            {"hop_radius", grid.hop_radius},
            {"metric", to_string(grid.metric)}};
}

GridSpec grid_from_json(const ordered_json& j) {
    GridSpec g;
    g.image_side = j.at("W").get<int64_t>();
    g.patch_side = j.at("C").get<int64_t>();
    g.patches_per_side = j.at("P").get<int64_t>();
    g.hop_radius = j.at("hop_radius").get<int64_t>();
    g.metric = neighbor_metric_from_string(j.at("metric").get<std::string>());
    g.validate();
    return g;
}

namespace {

std::string param_file_name(const std::string& param_name) {
    std::string f = param_name;
    for (char& c : f)
        if (c == '.' || c == '/') c = '_';
    return f + ".tvet";
}

} // namespace

void save_checkpoint(const std::filesystem::path& dir, const CheckpointMeta& meta,
                     const std::vector<NamedParam>& params) {
    std::filesystem::create_directories(dir);
    ordered_json manifest;
    manifest["version"] = 1;
    manifest["kind"] = meta.kind;
    manifest["seed"] = meta.seed;
    manifest["grid"] = grid_to_json(meta.grid);
    manifest["arch"] = meta.arch;
    ordered_json jparams = ordered_json::array();
    for (const auto& p : params) {
        const std::string file = param_file_name(p.name);
        write_tvet(dir / file, p.tensor);
        jparams.push_back({{"name", p.name},
                           {"dims", p.tensor.dims()},
                           {"file", file},
                           {"sha256", sha256_file_hex(dir / file)}});
    }
    manifest["params"] = std::move(jparams);
    std::ofstream out(dir / "manifest.json");
    if (!out) throw ValidationError("cannot write checkpoint manifest in " + dir.string());
    out << manifest.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw ValidationError("no checkpoint manifest in " + dir.string());
    ordered_json manifest = ordered_json::parse(in);

    LoadedCheckpoint ck;
    ck.meta.kind = manifest.at("kind").get<std::string>();
    ck.meta.seed = manifest.at("seed").get<uint64_t>();
    ck.meta.grid = grid_from_json(manifest.at("grid"));
    ck.meta.arch = manifest.at("arch");
    for (const auto& jp : manifest.at("params")) {
        const std::string name = jp.at("name").get<std::string>();
        const std::string file = jp.at("file").get<std::string>();
        const std::string want = jp.at("sha256").get<std::string>();
        if (sha256_file_hex(dir / file) != want)
            throw ValidationError("sha256 mismatch for " + (dir / file).string());
        Tensor t = read_tvet(dir / file);
        const Shape dims = jp.at("dims").get<Shape>();
        if (t.dims() != dims)
            throw ValidationError("parameter '" + name + "' file shape " + shape_str(t.dims()) +
                                  " disagrees with manifest " + shape_str(dims));
        ck.params.push_back({name, std::move(t)});
    }
    return ck;
}

void save_backbone(const std::filesystem::path& dir, const BackboneEncoder& enc, uint64_t seed) {
    CheckpointMeta meta;
    meta.kind = "backbone";
    meta.seed = seed;
    meta.grid = enc.grid();
    meta.arch = {{"d_model", enc.config().d_model},
                 {"D", enc.config().embed_dim},
                 {"L", enc.config().n_blocks}};
    save_checkpoint(dir, meta, enc.named_params());
}

BackboneEncoder load_backbone(const std::filesystem::path& dir) {
    LoadedCheckpoint ck = load_checkpoint(dir);
    if (ck.meta.kind != "backbone")
        throw ValidationError(dir.string() + " holds a '" + ck.meta.kind +
                              "' checkpoint, expected backbone");
    EncoderConfig cfg;
    cfg.d_model = ck.meta.arch.at("d_model").get<int64_t>();
    cfg.embed_dim = ck.meta.arch.at("D").get<int64_t>();
    cfg.n_blocks = ck.meta.arch.at("L").get<int64_t>();
    return BackboneEncoder::from_params(ck.meta.grid, cfg, ck.params);
}

void save_head(const std::filesystem::path& dir, const ClassifierHead& head,
               const GridSpec& grid, uint64_t seed) {
    CheckpointMeta meta;
    meta.kind = "head";
    meta.seed = seed;
    meta.grid = grid;
    meta.arch = {{"D", head.embed_dim()}, {"n_classes", head.n_classes()}};
    save_checkpoint(dir, meta, head.named_params());
}

ClassifierHead load_head(const std::filesystem::path& dir) {
    LoadedCheckpoint ck = load_checkpoint(dir);
    if (ck.meta.kind != "head")
        throw ValidationError(dir.string() + " holds a '" + ck.meta.kind +
                              "' checkpoint, expected head");
    return ClassifierHead::from_params(ck.meta.arch.at("D").get<int64_t>(),
                                       ck.meta.arch.at("n_classes").get<int64_t>(), ck.params);
}

} // namespace tve
