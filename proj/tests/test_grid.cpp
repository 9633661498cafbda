#include <doctest.h>

#include "support/gradcheck.hpp"
#include "tve/grid.hpp"

using namespace tve;

namespace {

GridSpec grid_wcp(int64_t W, int64_t C, int64_t P, int64_t hop = 2) {
    GridSpec g;
    g.image_side = W;
    g.patch_side = C;
    g.patches_per_side = P;
    g.hop_radius = hop;
    return g;
}

Tensor random_image(const GridSpec& g, Rng& rng) {
    return testing::random_tensor({3, g.image_side, g.image_side}, rng, -1.0, 1.0, false);
}

} // namespace

TEST_SUITE_BEGIN("patch_grid");

TEST_CASE("grid spec validates W == C*P") {
    CHECK_THROWS_AS(grid_wcp(33, 4, 8).validate(), ValidationError);
    CHECK_NOTHROW(grid_wcp(32, 4, 8).validate());
    CHECK_THROWS_AS(grid_wcp(0, 0, 0).validate(), ValidationError);
}

TEST_CASE("center patch of a 5x5 grid with hop 2 covers all 25 patches") {
    const GridSpec g = grid_wcp(20, 4, 5, 2);
    CHECK(neighbors(PatchId{3, 3}, g).count() == 25);
}

TEST_CASE("corner (1,1) of a 4x4 grid with hop 1 is the 2x2 corner block") {
    // Chebyshev ball of radius 1 around (1,1), clipped: {(1,1),(1,2),(2,1),(2,2)}.
    const GridSpec g = grid_wcp(16, 4, 4, 1);
    const PatchSubset s = neighbors(PatchId{1, 1}, g);
    CHECK(s.count() == 4);
    CHECK(s.contains(PatchId{1, 1}, g));
    CHECK(s.contains(PatchId{1, 2}, g));
    CHECK(s.contains(PatchId{2, 1}, g));
    CHECK(s.contains(PatchId{2, 2}, g));
}

TEST_CASE("hop 0 neighborhood is the patch itself") {
    const GridSpec g = grid_wcp(32, 4, 8, 0);
    Rng rng(4);
    for (int k = 0; k < 10; ++k) {
        const PatchId z{int64_t(rng.uniform_int(8)) + 1, int64_t(rng.uniform_int(8)) + 1};
        const PatchSubset s = neighbors(z, g);
        CHECK(s.count() == 1);
        CHECK(s.contains(z, g));
    }
}

TEST_CASE("neighborhood always contains z and is bounded by the window") {
    const GridSpec g = grid_wcp(32, 4, 8, 2);
    for (int64_t i = 1; i <= 8; ++i) {
        for (int64_t j = 1; j <= 8; ++j) {
            const PatchSubset s = neighbors(PatchId{i, j}, g);
            CHECK(s.contains(PatchId{i, j}, g));
            CHECK(s.count() <= 25); // (2*hop+1)^2
        }
    }
}

TEST_CASE("manhattan metric gives the diamond neighborhood") {
    GridSpec g = grid_wcp(32, 4, 8, 2);
    g.metric = NeighborMetric::manhattan;
    CHECK(neighbors(PatchId{4, 4}, g).count() == 13); // |diamond(2)|
    CHECK(neighbors(PatchId{1, 1}, g).count() == 6);
}

TEST_CASE("out-of-grid patch is rejected") {
    const GridSpec g = grid_wcp(32, 4, 8);
    CHECK_THROWS_AS(neighbors(PatchId{0, 1}, g), ValidationError);
    CHECK_THROWS_AS(neighbors(PatchId{9, 3}, g), ValidationError);
}

TEST_CASE("apply_mask: full grid is identity, empty is all-zero") {
    const GridSpec g = grid_wcp(32, 4, 8);
    Rng rng(17);
    const Tensor img = random_image(g, rng);
    const Tensor full = apply_mask(img, PatchSubset::full(g), g);
    CHECK(full.data() == img.data());
    const Tensor zero = apply_mask(img, PatchSubset::empty(g), g);
    for (float v : zero.data()) CHECK(v == 0.0f);
}

TEST_CASE("single-patch subset keeps exactly C*C pixels per channel") {
    const GridSpec g = grid_wcp(8, 4, 2);
    Rng rng(21);
    // Nonzero everywhere so kept pixels are detectable.
    std::vector<float> d(size_t(3 * 8 * 8), 1.0f);
    const Tensor img = Tensor::from_data({3, 8, 8}, std::move(d));
    PatchSubset s = PatchSubset::empty(g);
    s.set(patch_bit(PatchId{1, 1}, g));
    const Tensor masked = apply_mask(img, s, g);
    int64_t nonzero = 0;
    for (float v : masked.data()) nonzero += v != 0.0f;
    CHECK(nonzero == 3 * 4 * 4);
    CHECK(pixel_mask(s, g).kept_count() == 16); // |S| * C^2
}

TEST_CASE("masking is idempotent and composes through intersection") {
    const GridSpec g = grid_wcp(32, 4, 8);
    Rng rng(31);
    const Tensor img = random_image(g, rng);
    for (int k = 0; k < 20; ++k) {
        const PatchSubset s = sample_subset(rng, PatchSubset::full(g));
        const PatchSubset t = sample_subset(rng, PatchSubset::full(g));
        const Tensor once = apply_mask(img, s, g);
        CHECK(apply_mask(once, s, g).data() == once.data());
        CHECK(apply_mask(once, t, g).data() == apply_mask(img, s.intersect(t), g).data());
    }
}

TEST_CASE("complement is an involution and partitions the grid") {
    const GridSpec g = grid_wcp(32, 4, 8);
    Rng rng(41);
    CHECK(complement(PatchSubset::empty(g), g) == PatchSubset::full(g));
    CHECK(complement(PatchSubset::full(g), g) == PatchSubset::empty(g));
    for (int k = 0; k < 20; ++k) {
        const PatchSubset s = sample_subset(rng, PatchSubset::full(g));
        CHECK(complement(complement(s, g), g) == s);
        CHECK(s.count() + complement(s, g).count() == 64);
    }
}

TEST_CASE("sample_subset of an empty universe is empty") {
    const GridSpec g = grid_wcp(32, 4, 8);
    Rng rng(51);
    CHECK(sample_subset(rng, PatchSubset::empty(g)).count() == 0);
}

TEST_CASE("sample_subset mean size approaches half the universe") {
    const GridSpec g = grid_wcp(32, 4, 8);
    Rng rng(61);
    const PatchSubset universe = PatchSubset::full(g);
    double total = 0.0;
    const int draws = 10000;
    for (int k = 0; k < draws; ++k) total += double(sample_subset(rng, universe).count());
    const double mean = total / draws;
    CHECK(mean > 32.0 * 0.95);
    CHECK(mean < 32.0 * 1.05);
}

TEST_CASE("sample_subset is deterministic per seed") {
    const GridSpec g = grid_wcp(32, 4, 8);
    const PatchSubset universe = PatchSubset::full(g);
    Rng a(77), b(77);
    for (int k = 0; k < 10; ++k) CHECK(sample_subset(a, universe) == sample_subset(b, universe));
}

TEST_CASE("hex serialization round-trips with LSB at patch (1,1)") {
    const GridSpec g = grid_wcp(32, 4, 8);
    PatchSubset s = PatchSubset::empty(g);
    s.set(patch_bit(PatchId{1, 1}, g));
    CHECK(s.to_hex() == "0000000000000001");
    CHECK(PatchSubset::from_hex(s.to_hex(), 64) == s);

    Rng rng(91);
    for (int k = 0; k < 20; ++k) {
        const PatchSubset r = sample_subset(rng, PatchSubset::full(g));
        CHECK(PatchSubset::from_hex(r.to_hex(), 64) == r);
    }
    // P=3: 9 bits -> 3 hex digits; bit 8 is patch (3,3).
    const GridSpec g3 = grid_wcp(12, 4, 3);
    PatchSubset t = PatchSubset::empty(g3);
    t.set(8);
    CHECK(t.to_hex() == "100");
    CHECK(PatchSubset::from_hex("100", 9) == t);
}

TEST_SUITE_END();
