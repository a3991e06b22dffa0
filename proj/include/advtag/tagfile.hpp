#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advtag/optimizer.hpp"

namespace advtag {

struct TagPrediction {
  int label = 0;
  std::string name;
  double probability = 0.0;
  friend bool operator==(const TagPrediction&, const TagPrediction&) = default;
};

struct TagMetadata {
  std::string model_hash;
  std::string image_hash;
  AttackKind mode = AttackKind::Untargeted;
  int target = 0;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  TagPrediction original;
  TagPrediction final_prediction;
  friend bool operator==(const TagMetadata&, const TagMetadata&) = default;
};

// Line coordinates are stored with 3 decimals; construct through
// quantize_coordinate so that parse(serialize(t)) == t.
struct TagFile {
  static constexpr int kVersion = 1;

  std::size_t canvas_size = 0;
  double sigma = 0.0;
  std::vector<Line> lines;
  TagMetadata metadata;

  TagParams params() const { return {lines, sigma}; }
  void validate() const;  // throws FormatError
  friend bool operator==(const TagFile&, const TagFile&) = default;
};

float quantize_coordinate(float v);
std::vector<Line> quantize_lines(std::span<const Line> lines);

std::string serialize_tagfile(const TagFile& tag);
TagFile parse_tagfile(const std::string& text);
void save_tagfile(const TagFile& tag, const std::filesystem::path& path);
TagFile load_tagfile(const std::filesystem::path& path);

// 16 hex digits of FNV-1a.
std::string hash_file(const std::filesystem::path& path);
std::string hash_image(const Tensor& image);

enum class GuideStyle { Guide, Overlay };

// One straight <path> per line, stroke width = stroke_width(sigma) in canvas
// pixels. Overlay references the image underneath the strokes.
std::string render_svg(const TagFile& tag, GuideStyle style, const std::optional<std::string>& image_href = {});

}  // namespace advtag
