#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tve/grid.hpp"
#include "tve/tensor.hpp"

namespace tve {

// Synthetic planted-blob corpora. Every task shares the generator: images are
// channel-mean-normalized noise plus one bright blob, so 0 is exactly the
// per-channel mean and ground-truth important patches are known.
//   quadrant: 4 classes, which quadrant holds a disc blob (pre-training task)
//   parity:   2 classes, blob in a main-diagonal vs anti-diagonal quadrant
//   shape:    2 classes, horizontally vs vertically elongated blob
struct DatasetEntry {
    Tensor image; // [3, W, W]
    int64_t label = 0;
    std::string task;
    std::string split; // "train" | "test"
    std::string file;  // relative TVET name once persisted
};

struct Dataset {
    GridSpec grid;
    uint64_t seed = 0;
    std::string task;
    int64_t n_classes = 0;
    std::vector<DatasetEntry> entries;

    std::vector<int64_t> split_indices(const std::string& split) const;
    void validate() const;
};

int64_t task_class_count(const std::string& task);

struct GenSpec {
    float noise_sigma = 0.2f;
    float blob_amp_lo = 0.7f;
    float blob_amp_hi = 1.1f;
};

// Deterministic per (grid, task, seed): image k draws from a child stream of
// the seed keyed by k, and labels follow an exact round-robin quota, so class
// balance is exact. Counts must be divisible by the task's class count.
Dataset generate_dataset(const GridSpec& grid, const std::string& task, int64_t n_train,
                         int64_t n_test, uint64_t seed, const GenSpec& gen = {});

// Directory layout: manifest.json + one TVET per image. The manifest carries
// a sha256 per image file; load verifies it. Entries are canonicalized by
// file name at load so manifest order cannot influence anything downstream.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

} // namespace tve
