#include "tve/grid.hpp"

#include <algorithm>
#include <cstdlib>

namespace tve {

std::string to_string(NeighborMetric m) {
    return m == NeighborMetric::chebyshev ? "chebyshev" : "manhattan";
}

NeighborMetric neighbor_metric_from_string(const std::string& s) {
    if (s == "chebyshev") return NeighborMetric::chebyshev;
    if (s == "manhattan") return NeighborMetric::manhattan;
    throw ValidationError("unknown neighbor metric '" + s + "'");
}

void GridSpec::validate() const {
    if (patches_per_side < 1 || patch_side < 1 || hop_radius < 0)
        throw ValidationError("grid: P >= 1, C >= 1, hop >= 0 required");
    if (image_side != patch_side * patches_per_side)
        throw ValidationError("grid: W (" + std::to_string(image_side) + ") != C*P (" +
                              std::to_string(patch_side * patches_per_side) + ")");
}

bool operator==(const GridSpec& a, const GridSpec& b) {
    return a.image_side == b.image_side && a.patch_side == b.patch_side &&
           a.patches_per_side == b.patches_per_side && a.hop_radius == b.hop_radius &&
           a.metric == b.metric;
}

PatchSubset::PatchSubset(int64_t patch_count)
    : bits_(patch_count), words_(size_t((patch_count + 63) / 64), 0) {
    if (patch_count <= 0) throw ValidationError("subset: patch count must be positive");
}

PatchSubset PatchSubset::empty(const GridSpec& spec) { return PatchSubset(spec.patch_count()); }

PatchSubset PatchSubset::full(const GridSpec& spec) {
    PatchSubset s(spec.patch_count());
    for (int64_t b = 0; b < s.bits_; ++b) s.set(b);
    return s;
}

int64_t PatchSubset::count() const {
    int64_t n = 0;
    for (uint64_t w : words_) n += __builtin_popcountll(w);
    return n;
}

bool PatchSubset::contains(int64_t bit) const {
    if (bit < 0 || bit >= bits_) throw ValidationError("subset: bit out of range");
    return (words_[size_t(bit / 64)] >> (bit % 64)) & 1u;
}

bool PatchSubset::contains(const PatchId& z, const GridSpec& spec) const {
    return contains(patch_bit(z, spec));
}

void PatchSubset::set(int64_t bit) {
    if (bit < 0 || bit >= bits_) throw ValidationError("subset: bit out of range");
    words_[size_t(bit / 64)] |= uint64_t(1) << (bit % 64);
}

void PatchSubset::clear(int64_t bit) {
    if (bit < 0 || bit >= bits_) throw ValidationError("subset: bit out of range");
    words_[size_t(bit / 64)] &= ~(uint64_t(1) << (bit % 64));
}

std::vector<int64_t> PatchSubset::members() const {
    std::vector<int64_t> out;
    out.reserve(size_t(count()));
    for (int64_t b = 0; b < bits_; ++b)
        if ((words_[size_t(b / 64)] >> (b % 64)) & 1u) out.push_back(b);
    return out;
}

PatchSubset PatchSubset::complemented() const {
    PatchSubset s(bits_);
    for (size_t w = 0; w < words_.size(); ++w) s.words_[w] = ~words_[w];
    const int64_t tail = bits_ % 64;
    if (tail) s.words_.back() &= (uint64_t(1) << tail) - 1;
    return s;
}

PatchSubset PatchSubset::intersect(const PatchSubset& other) const {
    if (bits_ != other.bits_) throw ValidationError("subset: universe mismatch");
    PatchSubset s(bits_);
    for (size_t w = 0; w < words_.size(); ++w) s.words_[w] = words_[w] & other.words_[w];
    return s;
}

PatchSubset PatchSubset::unite(const PatchSubset& other) const {
    if (bits_ != other.bits_) throw ValidationError("subset: universe mismatch");
    PatchSubset s(bits_);
    for (size_t w = 0; w < words_.size(); ++w) s.words_[w] = words_[w] | other.words_[w];
    return s;
}

std::string PatchSubset::to_hex() const {
    const int64_t digits = (bits_ + 3) / 4;
    std::string out(static_cast<size_t>(digits), '0');
    for (int64_t d = 0; d < digits; ++d) {
        unsigned v = 0;
        for (int64_t k = 0; k < 4; ++k) {
            const int64_t bit = d * 4 + k;
            if (bit < bits_ && ((words_[size_t(bit / 64)] >> (bit % 64)) & 1u)) v |= 1u << k;
        }
        out[size_t(digits - 1 - d)] = "0123456789abcdef"[v];
    }
    return out;
}

PatchSubset PatchSubset::from_hex(const std::string& hex, int64_t patch_count) {
    PatchSubset s(patch_count);
    const int64_t digits = (patch_count + 3) / 4;
    if (int64_t(hex.size()) != digits)
        throw ValidationError("subset: hex string length " + std::to_string(hex.size()) +
                              " != expected " + std::to_string(digits));
    for (int64_t d = 0; d < digits; ++d) {
        const char c = hex[size_t(digits - 1 - d)];
        unsigned v;
        if (c >= '0' && c <= '9') v = unsigned(c - '0');
        else if (c >= 'a' && c <= 'f') v = unsigned(c - 'a' + 10);
        else if (c >= 'A' && c <= 'F') v = unsigned(c - 'A' + 10);
        else throw ValidationError("subset: bad hex digit");
        for (int64_t k = 0; k < 4; ++k) {
            const int64_t bit = d * 4 + k;
            if (v & (1u << k)) {
                if (bit >= patch_count) throw ValidationError("subset: hex sets bit beyond universe");
                s.set(bit);
            }
        }
    }
    return s;
}

bool PatchSubset::operator==(const PatchSubset& other) const {
    return bits_ == other.bits_ && words_ == other.words_;
}

int64_t patch_bit(const PatchId& z, const GridSpec& spec) {
    const int64_t P = spec.patches_per_side;
    if (z.i < 1 || z.i > P || z.j < 1 || z.j > P)
        throw ValidationError("patch (" + std::to_string(z.i) + "," + std::to_string(z.j) +
                              ") outside " + std::to_string(P) + "x" + std::to_string(P) + " grid");
    return (z.i - 1) * P + (z.j - 1);
}

PatchId patch_from_bit(int64_t bit, const GridSpec& spec) {
    const int64_t P = spec.patches_per_side;
    if (bit < 0 || bit >= P * P) throw ValidationError("patch bit out of range");
    return PatchId{bit / P + 1, bit % P + 1};
}

PatchSubset neighbors(const PatchId& z, const GridSpec& spec) {
    spec.validate();
    patch_bit(z, spec); // range check
    const int64_t P = spec.patches_per_side;
    const int64_t hop = spec.hop_radius;
    PatchSubset s(P * P);
    for (int64_t i = std::max<int64_t>(1, z.i - hop); i <= std::min(P, z.i + hop); ++i) {
        for (int64_t j = std::max<int64_t>(1, z.j - hop); j <= std::min(P, z.j + hop); ++j) {
            const int64_t di = std::abs(i - z.i), dj = std::abs(j - z.j);
            const int64_t dist = spec.metric == NeighborMetric::chebyshev ? std::max(di, dj)
                                                                          : di + dj;
            if (dist <= hop) s.set(patch_bit(PatchId{i, j}, spec));
        }
    }
    return s;
}

PatchSubset complement(const PatchSubset& subset, const GridSpec& spec) {
    if (subset.universe_size() != spec.patch_count())
        throw ValidationError("subset universe does not match grid");
    return subset.complemented();
}

PatchSubset sample_subset(Rng& rng, const PatchSubset& universe) {
    PatchSubset s(universe.universe_size());
    for (int64_t b : universe.members())
        if (rng.bernoulli(0.5)) s.set(b);
    return s;
}

int64_t PixelMask::kept_count() const {
    int64_t n = 0;
    for (uint8_t k : keep) n += k;
    return n;
}

PixelMask pixel_mask(const PatchSubset& subset, const GridSpec& spec) {
    spec.validate();
    if (subset.universe_size() != spec.patch_count())
        throw ValidationError("subset universe does not match grid");
    const int64_t W = spec.image_side, C = spec.patch_side, P = spec.patches_per_side;
    PixelMask m;
    m.side = W;
    m.keep.assign(size_t(W * W), 0);
    for (int64_t b : subset.members()) {
        const int64_t pi = b / P, pj = b % P;
        for (int64_t r = 0; r < C; ++r)
            for (int64_t c = 0; c < C; ++c)
                m.keep[size_t((pi * C + r) * W + (pj * C + c))] = 1;
    }
    return m;
}

namespace {

void require_image_shape(const Tensor& image, const GridSpec& spec) {
    const int64_t W = spec.image_side;
    if (image.dims().size() != 3 || image.dims()[1] != W || image.dims()[2] != W)
        throw ValidationError("image shape " + shape_str(image.dims()) +
                              " does not match grid side " + std::to_string(W));
}

} // namespace

Tensor apply_mask(const Tensor& image, const PatchSubset& subset, const GridSpec& spec) {
    spec.validate();
    require_image_shape(image, spec);
    if (subset.universe_size() != spec.patch_count())
        throw ValidationError("subset universe does not match grid");
    const int64_t ch = image.dims()[0], W = spec.image_side;
    const PixelMask pm = pixel_mask(subset, spec);
    std::vector<float> out(image.data());
    for (int64_t c = 0; c < ch; ++c) {
        float* plane = out.data() + c * W * W;
        for (int64_t p = 0; p < W * W; ++p)
            if (!pm.keep[size_t(p)]) plane[p] = 0.0f;
    }
    return Tensor::from_data(image.dims(), std::move(out));
}

Tensor patchify(const Tensor& image, const GridSpec& spec) {
    spec.validate();
    require_image_shape(image, spec);
    const int64_t ch = image.dims()[0], W = spec.image_side, C = spec.patch_side,
                  P = spec.patches_per_side;
    const int64_t feat = C * C * ch;
    std::vector<float> out(static_cast<size_t>(P * P * feat));
    const float* X = image.data().data();
    for (int64_t pi = 0; pi < P; ++pi) {
        for (int64_t pj = 0; pj < P; ++pj) {
            float* row = out.data() + (pi * P + pj) * feat;
            int64_t k = 0;
            for (int64_t c = 0; c < ch; ++c)
                for (int64_t r = 0; r < C; ++r)
                    for (int64_t cc = 0; cc < C; ++cc)
                        row[k++] = X[c * W * W + (pi * C + r) * W + (pj * C + cc)];
        }
    }
    return Tensor::from_data({P * P, feat}, std::move(out));
}

Tensor patchify_masked(const Tensor& image, const PatchSubset& subset, const GridSpec& spec) {
    return patchify(apply_mask(image, subset, spec), spec);
}

} // namespace tve
