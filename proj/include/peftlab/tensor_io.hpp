#pragma once

#include <filesystem>

#include "peftlab/tensor.hpp"

namespace peftlab {

// Flat binary checkpoint format, little-endian:
//   magic "PTNS" | version u32 | ndim u32 | extents u32 each | f64 payload
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace peftlab
