#include "tve/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tve/hash.hpp"
#include "tve/tensor_io.hpp"

namespace tve {

using nlohmann::ordered_json;

std::vector<int64_t> Dataset::split_indices(const std::string& split) const {
    std::vector<int64_t> out;
    for (size_t i = 0; i < entries.size(); ++i)
        if (entries[i].split == split) out.push_back(int64_t(i));
    return out;
}

void Dataset::validate() const {
    grid.validate();
    if (entries.empty()) throw ValidationError("dataset has no entries");
    for (const auto& e : entries) {
        if (e.label < 0 || e.label >= n_classes)
            throw ValidationError("dataset label " + std::to_string(e.label) + " out of " +
                                  std::to_string(n_classes) + " classes");
        if (!e.image.defined()) throw ValidationError("dataset entry without image");
    }
}

int64_t task_class_count(const std::string& task) {
    if (task == "quadrant") return 4;
    if (task == "parity") return 2;
    if (task == "shape") return 2;
    throw ValidationError("unknown task '" + task + "' (expected quadrant|parity|shape)");
}

namespace {

// Quadrants indexed 0..3 row-major: 0 top-left, 1 top-right, 2 bottom-left,
// 3 bottom-right.
struct Blob {
    double cy, cx;       // center
    double ry, rx;       // semi-axes along the rotated frame
    double theta = 0.0;  // rotation in radians
    float amp[3];
};

Tensor render_image(const GridSpec& grid, const Blob& blob, const GenSpec& gen, Rng& rng) {
    const int64_t W = grid.image_side;
    std::vector<float> img(static_cast<size_t>(3 * W * W));
    for (float& v : img) v = float(rng.normal(0.0, double(gen.noise_sigma)));
    const double ct = std::cos(blob.theta), st = std::sin(blob.theta);
    for (int64_t c = 0; c < 3; ++c) {
        float* plane = img.data() + c * W * W;
        for (int64_t y = 0; y < W; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                const double dy = double(y) + 0.5 - blob.cy;
                const double dx = double(x) + 0.5 - blob.cx;
                const double u = (ct * dx + st * dy) / blob.rx;
                const double v = (-st * dx + ct * dy) / blob.ry;
                if (u * u + v * v <= 1.0) plane[y * W + x] += blob.amp[c];
            }
        }
    }
    // Normalize so 0 is exactly the per-channel mean.
    for (int64_t c = 0; c < 3; ++c) {
        float* plane = img.data() + c * W * W;
        double mu = 0.0;
        for (int64_t p = 0; p < W * W; ++p) mu += plane[p];
        mu /= double(W * W);
        for (int64_t p = 0; p < W * W; ++p) plane[p] = float(plane[p] - mu);
    }
    return Tensor::from_data({3, W, W}, std::move(img));
}

void fill_amp(Blob& blob, const GenSpec& gen, Rng& rng) {
    const double base = rng.uniform(double(gen.blob_amp_lo), double(gen.blob_amp_hi));
    for (int c = 0; c < 3; ++c) blob.amp[c] = float(base * rng.uniform(0.85, 1.15));
}

// Disc fully inside quadrant q of the image.
Blob disc_in_quadrant(const GridSpec& grid, int64_t q, const GenSpec& gen, Rng& rng) {
    const double W = double(grid.image_side);
    const double half = W / 2.0;
    const double r = rng.uniform(0.10, 0.16) * W;
    const double y0 = (q / 2) * half, x0 = (q % 2) * half;
    Blob b;
    b.ry = b.rx = r;
    b.cy = rng.uniform(y0 + r, y0 + half - r);
    b.cx = rng.uniform(x0 + r, x0 + half - r);
    fill_amp(b, gen, rng);
    return b;
}

// Elongated bar through the image center along the main or anti diagonal.
// The orientation flips which diagonal quadrant pair the bar covers, which is
// the quadrant-level signature the frozen backbone features retain.
Blob shape_blob(const GridSpec& grid, bool main_diagonal, const GenSpec& gen, Rng& rng) {
    const double W = double(grid.image_side);
    Blob b;
    b.theta = (main_diagonal ? 45.0 : 135.0) * 3.14159265358979323846 / 180.0;
    b.rx = rng.uniform(0.30, 0.38) * W; // half length
    b.ry = rng.uniform(0.05, 0.07) * W; // half thickness
    b.cy = W / 2 + rng.uniform(-0.08, 0.08) * W;
    b.cx = W / 2 + rng.uniform(-0.08, 0.08) * W;
    fill_amp(b, gen, rng);
    return b;
}

DatasetEntry make_entry(const GridSpec& grid, const std::string& task, int64_t label,
                        const GenSpec& gen, Rng& rng) {
    Blob blob;
    if (task == "quadrant") {
        blob = disc_in_quadrant(grid, label, gen, rng);
    } else if (task == "parity") {
        // Label 0: main-diagonal quadrants {0,3}; label 1: anti-diagonal {1,2}.
        const int64_t q = label == 0 ? (rng.bernoulli(0.5) ? 0 : 3) : (rng.bernoulli(0.5) ? 1 : 2);
        blob = disc_in_quadrant(grid, q, gen, rng);
    } else if (task == "shape") {
        blob = shape_blob(grid, label == 0, gen, rng);
    } else {
        throw ValidationError("unknown task '" + task + "'");
    }
    DatasetEntry e;
    e.image = render_image(grid, blob, gen, rng);
    e.label = label;
    e.task = task;
    return e;
}

} // namespace

Dataset generate_dataset(const GridSpec& grid, const std::string& task, int64_t n_train,
                         int64_t n_test, uint64_t seed, const GenSpec& gen) {
    grid.validate();
    const int64_t k = task_class_count(task);
    if (n_train <= 0 || n_test < 0)
        throw ValidationError("dataset counts must be positive");
    if (n_train % k != 0 || n_test % k != 0)
        throw ValidationError("dataset counts must be divisible by " + std::to_string(k) +
                              " classes for exact balance");

    Dataset ds;
    ds.grid = grid;
    ds.seed = seed;
    ds.task = task;
    ds.n_classes = k;
    const Rng master(seed);
    const int64_t total = n_train + n_test;
    ds.entries.reserve(size_t(total));
    char name[64];
    for (int64_t i = 0; i < total; ++i) {
        Rng rng = master.derive(uint64_t(i));
        DatasetEntry e = make_entry(grid, task, i % k, gen, rng);
        e.split = i < n_train ? "train" : "test";
        std::snprintf(name, sizeof(name), "img_%06lld.tvet", (long long)i);
        e.file = name;
        ds.entries.push_back(std::move(e));
    }
    return ds;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    ds.validate();
    std::filesystem::create_directories(dir);
    ordered_json manifest;
    manifest["version"] = 1;
    manifest["seed"] = ds.seed;
    manifest["task"] = ds.task;
    manifest["n_classes"] = ds.n_classes;
    manifest["grid"] = {{"W", ds.grid.image_side},
                        {"C", ds.grid.patch_side},
                        {"P", ds.grid.patches_per_side},
                        {"hop_radius", ds.grid.hop_radius},
                        {"metric", to_string(ds.grid.metric)}};
    ordered_json entries = ordered_json::array();
    for (const auto& e : ds.entries) {
        write_tvet(dir / e.file, e.image);
        entries.push_back({{"file", e.file},
                           {"label", e.label},
                           {"task", e.task},
                           {"split", e.split},
                           {"sha256", sha256_file_hex(dir / e.file)}});
    }
    manifest["entries"] = std::move(entries);
    std::ofstream out(dir / "manifest.json");
    if (!out) throw ValidationError("cannot write manifest in " + dir.string());
    out << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw ValidationError("no manifest.json in " + dir.string());
    ordered_json manifest = ordered_json::parse(in);

    Dataset ds;
    ds.seed = manifest.at("seed").get<uint64_t>();
    ds.task = manifest.at("task").get<std::string>();
    ds.n_classes = manifest.at("n_classes").get<int64_t>();
    const auto& g = manifest.at("grid");
    ds.grid.image_side = g.at("W").get<int64_t>();
    ds.grid.patch_side = g.at("C").get<int64_t>();
    ds.grid.patches_per_side = g.at("P").get<int64_t>();
    ds.grid.hop_radius = g.at("hop_radius").get<int64_t>();
    ds.grid.metric = neighbor_metric_from_string(g.at("metric").get<std::string>());
    ds.grid.validate();

    for (const auto& je : manifest.at("entries")) {
        DatasetEntry e;
        e.file = je.at("file").get<std::string>();
        e.label = je.at("label").get<int64_t>();
        e.task = je.at("task").get<std::string>();
        e.split = je.at("split").get<std::string>();
        const std::string want = je.at("sha256").get<std::string>();
        const std::string got = sha256_file_hex(dir / e.file);
        if (want != got)
            throw ValidationError("sha256 mismatch for " + (dir / e.file).string());
        e.image = read_tvet(dir / e.file);
        ds.entries.push_back(std::move(e));
    }
    // Canonical order: by file name, so manifest permutation changes nothing.
    std::sort(ds.entries.begin(), ds.entries.end(),
              [](const DatasetEntry& a, const DatasetEntry& b) { return a.file < b.file; });
    ds.validate();
    return ds;
}

} // namespace tve
