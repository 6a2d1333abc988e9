// Binary tensor dumps for fixtures: "MRSVMAT1", u32 rank, i32 dims[rank],
// u32 dtype (1 = little-endian float64), then the row-major payload.
#pragma once

#include <filesystem>

#include "mrsv/nn/tensor.hpp"

namespace mrsv {

void write_matrix(const std::filesystem::path& path, const nn::Tensor& t);
nn::Tensor read_matrix(const std::filesystem::path& path);

}  // namespace mrsv
