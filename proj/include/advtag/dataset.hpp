#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advtag/tensor.hpp"

namespace advtag {

struct LabeledImage {
  Tensor pixels;  // [3, s, s], values in [0, 1]
  int label = 0;
};

struct Dataset {
  std::size_t image_size = 0;
  std::size_t num_classes = 0;
  std::vector<LabeledImage> items;
  std::vector<std::string> class_names;  // empty or num_classes entries

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  std::string class_name(int c) const;
  // Throws ContractViolation on wrong shapes, out-of-range pixels or labels.
  void validate() const;
};

// Splits off the trailing `fraction` of items as a held-out set.
std::pair<Dataset, Dataset> split_holdout(const Dataset& data, double fraction);

Dataset resize_dataset(const Dataset& data, std::size_t size);

// Procedural 10-class 32x32 RGB benchmark: disk, square, triangle, ring,
// plus, horizontal bars, vertical bars, diagonal bars, checkerboard, and
// dot grid, with random colours, placement, backgrounds and pixel noise.
// Pixels are quantised to 8 bits.
Dataset make_shapes_dataset(std::size_t count, std::uint64_t seed, std::size_t size = 32);
// Ten procedural texture classes (sky, grass, water, sand, brick, foliage,
// stone, snow, sunset, wood) built from value-noise patterns with jittered
// per-class palettes. Rendered at 32x32 and resized to `size`.
Dataset make_textures_dataset(std::size_t count, std::uint64_t seed, std::size_t size = 32);
// Two classes: 0 = dark (mean intensity in [0.05, 0.35]), 1 = bright
// ([0.65, 0.95]); near-uniform grey images with mild noise.
Dataset make_toy_dataset(std::size_t count, std::uint64_t seed, std::size_t size = 32);

// Packed binary, little-endian: "ATDS", u32 version, u32 s, u32 C, u32 count,
// then `count` records of u32 label followed by s*s*3 u8 pixels (row-major,
// interleaved RGB).
void save_packed(const Dataset& data, const std::filesystem::path& path);
Dataset load_packed(const std::filesystem::path& path);

// Directory with manifest.csv ("path,label" header, paths relative to the
// directory) and optional labels.txt (one class name per line).
void save_png_dir(const Dataset& data, const std::filesystem::path& dir);
Dataset load_png_dir(const std::filesystem::path& dir);

// Dispatches on directory vs file.
Dataset load_dataset(const std::filesystem::path& path);

std::vector<std::string> read_labels(const std::filesystem::path& path);
void write_labels(const std::vector<std::string>& names, const std::filesystem::path& path);

}  // namespace advtag
