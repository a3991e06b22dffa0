#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "advtag/tensor.hpp"

namespace advtag {

// One straight segment in continuous canvas coordinates; pixel (col, row)
// has its centre at (col + 0.5, row + 0.5).
struct Line {
  float x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double length() const;
  friend bool operator==(const Line&, const Line&) = default;
};

struct TagParams {
  std::vector<Line> lines;
  double sigma = 0.0;  // kernel width, canvas px^2

  // Throws ContractViolation unless sigma > 0 and every coordinate is finite
  // and within [0, canvas].
  void validate(std::size_t canvas) const;
};

// Stroke width used throughout: 60 px^2 on a 224 px canvas, with lengths
// scaled by canvas/224 (so sigma scales with its square).
double default_sigma(std::size_t canvas);

// Pixels with intensity above this count as "drawn" for erasure.
inline constexpr double kDrawThreshold = 0.05;
// Kernel values below this are truncated to exactly zero.
inline constexpr double kKernelFloor = 1e-4;

// Distance beyond which the kernel is truncated: sqrt(sigma * ln(1 / floor)).
double cutoff_radius(double sigma);

// Half-intensity stroke width, 2 sqrt(sigma ln 2).
double stroke_width(double sigma);

struct KernelSample {
  double intensity = 0.0;
  std::array<double, 4> grad{};  // d intensity / d (x0, y0, x1, y1)
};

// exp(-d^2 / sigma), d = distance from (px, py) to the closed segment, with
// the same truncation used by render_lines.
KernelSample segment_kernel(const Line& line, double px, double py, double sigma);

// Packs lines as an [L, 4] tensor of (x0, y0, x1, y1) rows and back.
Tensor lines_to_tensor(std::span<const Line> lines);
std::vector<Line> tensor_to_lines(const Tensor& coords);

// [s, s] canvas: per-pixel max over lines of the segment kernel. Ties go to
// the lowest line index; an empty tag renders all zeros.
Tensor render_lines(const TagParams& tag, std::size_t canvas);
// Differentiable w.r.t. coords ([L, 4]).
Var render_lines(Var coords, double sigma, std::size_t canvas);

// clamp(image[c] - canvas, 0, 1) per channel. image [3, s, s], canvas [s, s].
Tensor composite(const Tensor& image, const Tensor& canvas);
Var composite(Var image, Var canvas);

// 0/1 mask zeroing each drawn pixel independently with probability e. One
// uniform is drawn per pixel in row-major order regardless of its value.
Tensor erase_mask(const Tensor& canvas, double e, std::uint64_t seed);
Tensor random_erase(const Tensor& canvas, double e, std::uint64_t seed);
// The mask enters the tape as a constant.
Var random_erase(Var canvas, double e, std::uint64_t seed);

// Black-on-white tracing guide: 0 where the rendered intensity is >= 0.5,
// 1 elsewhere. [s, s].
Tensor guide_image(const TagParams& tag, std::size_t canvas);

}  // namespace advtag
