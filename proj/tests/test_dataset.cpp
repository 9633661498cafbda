#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tve/dataset.hpp"

using namespace tve;
namespace fs = std::filesystem;

namespace {

GridSpec desk_grid() {
    GridSpec g;
    g.image_side = 32;
    g.patch_side = 4;
    g.patches_per_side = 8;
    g.hop_radius = 2;
    return g;
}

} // namespace

TEST_SUITE_BEGIN("dataset");

TEST_CASE("label histogram is exactly balanced") {
    const Dataset ds = generate_dataset(desk_grid(), "quadrant", 40, 8, 123);
    std::vector<int64_t> train_hist(4, 0), test_hist(4, 0);
    for (const auto& e : ds.entries)
        (e.split == "train" ? train_hist : test_hist)[size_t(e.label)]++;
    for (int64_t c : train_hist) CHECK(c == 10);
    for (int64_t c : test_hist) CHECK(c == 2);
}

TEST_CASE("counts not divisible by class count are rejected") {
    CHECK_THROWS_AS(generate_dataset(desk_grid(), "quadrant", 41, 8, 1), ValidationError);
    CHECK_THROWS_AS(generate_dataset(desk_grid(), "parity", 7, 2, 1), ValidationError);
}

TEST_CASE("images are normalized to zero channel mean") {
    const Dataset ds = generate_dataset(desk_grid(), "shape", 8, 0, 9);
    for (const auto& e : ds.entries) {
        const int64_t plane = 32 * 32;
        for (int64_t c = 0; c < 3; ++c) {
            double mu = 0.0;
            for (int64_t p = 0; p < plane; ++p) mu += e.image.data()[size_t(c * plane + p)];
            CHECK(std::abs(mu / double(plane)) < 1e-5);
        }
    }
}

TEST_CASE("generation is deterministic per seed") {
    const Dataset a = generate_dataset(desk_grid(), "parity", 8, 2, 7);
    const Dataset b = generate_dataset(desk_grid(), "parity", 8, 2, 7);
    const Dataset c = generate_dataset(desk_grid(), "parity", 8, 2, 8);
    REQUIRE(a.entries.size() == b.entries.size());
    for (size_t i = 0; i < a.entries.size(); ++i)
        CHECK(a.entries[i].image.data() == b.entries[i].image.data());
    CHECK(a.entries[0].image.data() != c.entries[0].image.data());
}

TEST_CASE("save/load round trip verifies hashes and canonicalizes order") {
    const fs::path dir = fs::temp_directory_path() / "tve_test_dataset";
    fs::remove_all(dir);
    const Dataset ds = generate_dataset(desk_grid(), "quadrant", 8, 4, 55);
    save_dataset(dir, ds);
    const Dataset back = load_dataset(dir);
    REQUIRE(back.entries.size() == ds.entries.size());
    CHECK(back.task == "quadrant");
    CHECK(back.n_classes == 4);
    for (size_t i = 0; i < ds.entries.size(); ++i) {
        CHECK(back.entries[i].file == ds.entries[i].file);
        CHECK(back.entries[i].label == ds.entries[i].label);
        CHECK(back.entries[i].image.data() == ds.entries[i].image.data());
    }

    // Corrupt one tensor file: load must reject it.
    {
        std::ofstream f(dir / ds.entries[0].file, std::ios::binary | std::ios::app);
        f << "x";
    }
    CHECK_THROWS_AS(load_dataset(dir), ValidationError);
    fs::remove_all(dir);
}

TEST_CASE("manifest entry order does not affect the loaded dataset") {
    const fs::path dir = fs::temp_directory_path() / "tve_test_dataset_perm";
    fs::remove_all(dir);
    save_dataset(dir, generate_dataset(desk_grid(), "parity", 8, 2, 3));

    // Reverse the entries array in the manifest.
    std::ifstream in(dir / "manifest.json");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const Dataset before = load_dataset(dir);

    auto j = nlohmann::ordered_json::parse(text);
    auto& arr = j.at("entries");
    std::reverse(arr.begin(), arr.end());
    {
        std::ofstream out(dir / "manifest.json");
        out << j.dump(2) << "\n";
    }
    const Dataset after = load_dataset(dir);
    REQUIRE(before.entries.size() == after.entries.size());
    for (size_t i = 0; i < before.entries.size(); ++i) {
        CHECK(before.entries[i].file == after.entries[i].file);
        CHECK(before.entries[i].image.data() == after.entries[i].image.data());
    }
    fs::remove_all(dir);
}

TEST_SUITE_END();
