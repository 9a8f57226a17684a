#pragma once

// 8-bit binary PPM (P6) read/write for channels-last RGB rasters in [0,1].

#include <cstddef>
#include <filesystem>

#include "neurodec/tensor.hpp"

namespace neurodec {

void write_ppm(const std::filesystem::path& path, const Tensor& image, std::size_t h, std::size_t w);
// Returns (h*w x 3) in [0,1]; h and w are set from the header.
Tensor read_ppm(const std::filesystem::path& path, std::size_t& h, std::size_t& w);

// Rounds to the 8-bit grid the files store.
Tensor quantize_8bit(const Tensor& image);

}  // namespace neurodec
