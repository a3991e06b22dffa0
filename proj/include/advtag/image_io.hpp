#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "advtag/tensor.hpp"

namespace advtag {

// 8-bit PNG -> [3, H, W] in [0, 1]. Grey and palette images are expanded,
// alpha is dropped.
Tensor read_png(const std::filesystem::path& path);

// [3, H, W] (RGB) or [H, W] (grey) in [0, 1] -> 8-bit PNG, values rounded
// to the nearest level.
void write_png(const std::filesystem::path& path, const Tensor& image);

// 8-bit quantisation used by write_png.
std::uint8_t to_u8(float v);

// Bilinear resampling of a [3, H, W] image (pixel-centre aligned).
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

}  // namespace advtag
