#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tve/rng.hpp"
#include "tve/tensor.hpp"

namespace tve {

enum class NeighborMetric { chebyshev, manhattan };

std::string to_string(NeighborMetric m);
NeighborMetric neighbor_metric_from_string(const std::string& s);

// P x P partition of a W x W image into C x C pixel patches, W == C*P.
struct GridSpec {
    int64_t image_side = 32;   // W
    int64_t patch_side = 4;    // C
    int64_t patches_per_side = 8; // P
    int64_t hop_radius = 2;
    NeighborMetric metric = NeighborMetric::chebyshev;

    void validate() const;
    int64_t patch_count() const { return patches_per_side * patches_per_side; }
};

bool operator==(const GridSpec& a, const GridSpec& b);

// 1-based grid coordinates.
struct PatchId {
    int64_t i = 1;
    int64_t j = 1;
};

// Subset of the P x P grid as a bitmask. Bit b = (i-1)*P + (j-1), row-major,
// LSB = patch (1,1). Iteration order is row-major.
class PatchSubset {
public:
    PatchSubset() = default;
    explicit PatchSubset(int64_t patch_count);

    static PatchSubset empty(const GridSpec& spec);
    static PatchSubset full(const GridSpec& spec);

    int64_t universe_size() const { return bits_; }
    int64_t count() const;
    bool contains(int64_t bit) const;
    bool contains(const PatchId& z, const GridSpec& spec) const;
    void set(int64_t bit);
    void clear(int64_t bit);

    // Row-major list of set bit indices.
    std::vector<int64_t> members() const;

    PatchSubset complemented() const;
    PatchSubset intersect(const PatchSubset& other) const;
    PatchSubset unite(const PatchSubset& other) const;

    // Hex bitmask, most significant nibble first, padded to ceil(bits/4) digits.
    std::string to_hex() const;
    static PatchSubset from_hex(const std::string& hex, int64_t patch_count);

    bool operator==(const PatchSubset& other) const;

private:
    int64_t bits_ = 0;
    std::vector<uint64_t> words_;
};

int64_t patch_bit(const PatchId& z, const GridSpec& spec);
PatchId patch_from_bit(int64_t bit, const GridSpec& spec);

// Hop neighborhood of z clipped to the grid; always contains z itself.
PatchSubset neighbors(const PatchId& z, const GridSpec& spec);

// Complement within the grid.
PatchSubset complement(const PatchSubset& subset, const GridSpec& spec);

// Each member of universe kept independently with probability 1/2.
PatchSubset sample_subset(Rng& rng, const PatchSubset& universe);

// W x W boolean keep-map: pixel kept iff its patch is in the subset.
struct PixelMask {
    int64_t side = 0;
    std::vector<uint8_t> keep; // row-major W*W

    int64_t kept_count() const;
};

PixelMask pixel_mask(const PatchSubset& subset, const GridSpec& spec);

// Zeroes every channel of each pixel whose patch is not in the subset.
// Kept pixels are bit-identical to the input. Image is [channels, W, W].
Tensor apply_mask(const Tensor& image, const PatchSubset& subset, const GridSpec& spec);

// Row-major patch matrix [P*P, C*C*channels]; feature order is channel-major
// within a patch. Masked variant zeroes rows of excluded patches, identical
// to patchifying apply_mask(image, subset).
Tensor patchify(const Tensor& image, const GridSpec& spec);
Tensor patchify_masked(const Tensor& image, const PatchSubset& subset, const GridSpec& spec);

} // namespace tve
