#pragma once

#include <filesystem>

#include "tve/tensor.hpp"

namespace tve {

// "TVET" container: magic 54 56 45 54, u8 version=1, u8 dtype=1 (f32), u8 rank,
// u8 zero pad, rank little-endian u64 dims, row-major little-endian f32 payload.
void write_tvet(const std::filesystem::path& path, const Tensor& t);
Tensor read_tvet(const std::filesystem::path& path);

} // namespace tve
