#include "advtag/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "advtag/errors.hpp"
#include "advtag/ops.hpp"
#include "advtag/rng.hpp"

namespace advtag {
namespace {

struct Geometry {
  double ax, ay, bx, by;
  bool swapped;  // endpoints were reordered into canonical order
};

// Canonical endpoint order makes Line(a, b) and Line(b, a) evaluate the exact
// same floating-point expressions.
Geometry canonical(const Line& l) {
  const bool swap = (l.x1 < l.x0) || (l.x1 == l.x0 && l.y1 < l.y0);
  if (swap) return {l.x1, l.y1, l.x0, l.y0, true};
  return {l.x0, l.y0, l.x1, l.y1, false};
}

// Returns the kernel at squared distance with gradient w.r.t. the canonical
// endpoints (a, b).
KernelSample evaluate(const Geometry& g, double px, double py, double sigma, double cutoff_sq) {
  KernelSample out;
  const double ex = g.bx - g.ax, ey = g.by - g.ay;
  const double len_sq = ex * ex + ey * ey;
  double rx, ry, wa, wb;
  if (len_sq < 1e-12) {
    rx = px - g.ax;
    ry = py - g.ay;
    wa = 0.5;
    wb = 0.5;
  } else {
    const double t = std::clamp(((px - g.ax) * ex + (py - g.ay) * ey) / len_sq, 0.0, 1.0);
    rx = px - (g.ax + t * ex);
    ry = py - (g.ay + t * ey);
    wa = 1.0 - t;
    wb = t;
  }
  const double d_sq = rx * rx + ry * ry;
  if (d_sq > cutoff_sq) return out;
  const double value = std::exp(-d_sq / sigma);
  out.intensity = value;
  // d(d^2)/da = -2 r (1 - t), d(d^2)/db = -2 r t; dI = -I / sigma * d(d^2).
  const double k = 2.0 * value / sigma;
  out.grad = {k * rx * wa, k * ry * wa, k * rx * wb, k * ry * wb};
  return out;
}

std::array<double, 4> to_line_order(const Geometry& g, const std::array<double, 4>& grad) {
  if (!g.swapped) return grad;
  return {grad[2], grad[3], grad[0], grad[1]};
}

struct PixelBox {
  std::size_t x_begin, x_end, y_begin, y_end;
};

PixelBox bounding_box(const Line& l, double radius, std::size_t canvas) {
  auto lo = [&](double v) {
    const double f = std::floor(v - radius - 1.0);
    return static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(canvas)));
  };
  auto hi = [&](double v) {
    const double f = std::ceil(v + radius + 1.0);
    return static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(canvas)));
  };
  return {lo(std::min(l.x0, l.x1)), hi(std::max(l.x0, l.x1)), lo(std::min(l.y0, l.y1)), hi(std::max(l.y0, l.y1))};
}

void check_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ContractViolation("render_lines: sigma must be positive and finite, got " + std::to_string(sigma));
  }
}

void check_lines(std::span<const Line> lines, std::size_t canvas) {
  const auto s = static_cast<float>(canvas);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const Line& l = lines[i];
    for (float v : {l.x0, l.y0, l.x1, l.y1}) {
      if (!std::isfinite(v) || v < 0.0f || v > s) {
        throw ContractViolation("line " + std::to_string(i) + " has coordinate " + std::to_string(v) +
                                " outside [0, " + std::to_string(canvas) + "]");
      }
    }
  }
}

// Max-composited render; owner[p] is the winning line or -1.
void rasterize(std::span<const Line> lines, double sigma, std::size_t canvas, std::span<float> out,
               std::vector<int>& owner) {
  const double radius = cutoff_radius(sigma);
  const double cutoff_sq = radius * radius;
  owner.assign(canvas * canvas, -1);
  std::fill(out.begin(), out.end(), 0.0f);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const Geometry g = canonical(lines[i]);
    const PixelBox box = bounding_box(lines[i], radius, canvas);
    for (std::size_t y = box.y_begin; y < box.y_end; ++y)
      for (std::size_t x = box.x_begin; x < box.x_end; ++x) {
        const double v = evaluate(g, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, sigma, cutoff_sq).intensity;
        const std::size_t p = y * canvas + x;
        const auto fv = static_cast<float>(v);
        if (fv > out[p]) {
          out[p] = fv;
          owner[p] = static_cast<int>(i);
        }
      }
  }
}

}  // namespace

double Line::length() const { return std::hypot(static_cast<double>(x1) - x0, static_cast<double>(y1) - y0); }

void TagParams::validate(std::size_t canvas) const {
  check_sigma(sigma);
  check_lines(lines, canvas);
}

double default_sigma(std::size_t canvas) {
  const double scale = static_cast<double>(canvas) / 224.0;
  return 60.0 * scale * scale;
}

double cutoff_radius(double sigma) { return std::sqrt(sigma * std::log(1.0 / kKernelFloor)); }

double stroke_width(double sigma) { return 2.0 * std::sqrt(sigma * std::log(2.0)); }

KernelSample segment_kernel(const Line& line, double px, double py, double sigma) {
  check_sigma(sigma);
  const Geometry g = canonical(line);
  const double radius = cutoff_radius(sigma);
  KernelSample k = evaluate(g, px, py, sigma, radius * radius);
  k.grad = to_line_order(g, k.grad);
  return k;
}

Tensor lines_to_tensor(std::span<const Line> lines) {
  if (lines.empty()) throw ContractViolation("lines_to_tensor: empty line list");
  Tensor t({lines.size(), 4});
  for (std::size_t i = 0; i < lines.size(); ++i) {
    t[4 * i] = lines[i].x0;
    t[4 * i + 1] = lines[i].y0;
    t[4 * i + 2] = lines[i].x1;
    t[4 * i + 3] = lines[i].y1;
  }
  return t;
}

std::vector<Line> tensor_to_lines(const Tensor& coords) {
  if (coords.rank() != 2 || coords.dim(1) != 4) {
    throw ContractViolation("tensor_to_lines: expected [L, 4], got " + to_string(coords.shape()));
  }
  std::vector<Line> lines(coords.dim(0));
  for (std::size_t i = 0; i < lines.size(); ++i)
    lines[i] = {coords[4 * i], coords[4 * i + 1], coords[4 * i + 2], coords[4 * i + 3]};
  return lines;
}

Tensor render_lines(const TagParams& tag, std::size_t canvas) {
  tag.validate(canvas);
  Tensor out({canvas, canvas});
  std::vector<int> owner;
  rasterize(tag.lines, tag.sigma, canvas, out.data(), owner);
  return out;
}

Var render_lines(Var coords, double sigma, std::size_t canvas) {
  check_sigma(sigma);
  const std::vector<Line> lines = tensor_to_lines(coords.value());
  check_lines(lines, canvas);
  Tensor out({canvas, canvas});
  auto owner = std::make_shared<std::vector<int>>();
  rasterize(lines, sigma, canvas, out.data(), *owner);
  return coords.tape().record(
      "render_lines", std::move(out), {coords}, [owner, sigma, canvas](BackwardArgs& g) {
        const std::vector<Line> lines = tensor_to_lines(*g.in[0]);
        std::vector<Geometry> geo;
        geo.reserve(lines.size());
        for (const Line& l : lines) geo.push_back(canonical(l));
        const double radius = cutoff_radius(sigma);
        std::vector<double> acc(lines.size() * 4, 0.0);
        for (std::size_t p = 0; p < owner->size(); ++p) {
          const int i = (*owner)[p];
          const float up = g.out_grad[p];
          if (i < 0 || up == 0.0f) continue;
          const auto& line_geo = geo[static_cast<std::size_t>(i)];
          const double px = static_cast<double>(p % canvas) + 0.5, py = static_cast<double>(p / canvas) + 0.5;
          const auto grad = to_line_order(line_geo, evaluate(line_geo, px, py, sigma, radius * radius).grad);
          for (std::size_t k = 0; k < 4; ++k) acc[4 * static_cast<std::size_t>(i) + k] += up * grad[k];
        }
        for (std::size_t k = 0; k < acc.size(); ++k) g.in_grad[0][k] += static_cast<float>(acc[k]);
      });
}

Tensor composite(const Tensor& image, const Tensor& canvas) {
  Tape tape;
  return composite(tape.constant(image), tape.constant(canvas)).value();
}

Var composite(Var image, Var canvas) {
  const Tensor& I = image.value();
  const Tensor& C = canvas.value();
  if (I.rank() != 3 || I.dim(0) != 3 || C.rank() != 2 || C.dim(0) != I.dim(1) || C.dim(1) != I.dim(2)) {
    throw ContractViolation("composite: image " + to_string(I.shape()) + " and canvas " + to_string(C.shape()) +
                            " do not conform (want [3, s, s] and [s, s])");
  }
  const std::size_t plane = C.size();
  Tensor out(I.shape());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] = std::clamp(I[c * plane + p] - C[p], 0.0f, 1.0f);
  return image.tape().record("composite", std::move(out), {image, canvas}, [plane](BackwardArgs& g) {
    const Tensor& I = *g.in[0];
    const Tensor& C = *g.in[1];
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        const float diff = I[c * plane + p] - C[p];
        if (diff < 0.0f || diff > 1.0f) continue;
        const float up = g.out_grad[c * plane + p];
        if (!g.in_grad[0].empty()) g.in_grad[0][c * plane + p] += up;
        if (!g.in_grad[1].empty()) g.in_grad[1][p] -= up;
      }
  });
}

Tensor erase_mask(const Tensor& canvas, double e, std::uint64_t seed) {
  if (!(e >= 0.0 && e < 1.0)) throw ContractViolation("random_erase: e must be in [0, 1), got " + std::to_string(e));
  Tensor mask(canvas.shape(), 1.0f);
  Rng rng(seed);
  for (std::size_t p = 0; p < canvas.size(); ++p) {
    const double u = rng.uniform();
    if (canvas[p] > kDrawThreshold && u < e) mask[p] = 0.0f;
  }
  return mask;
}

Tensor random_erase(const Tensor& canvas, double e, std::uint64_t seed) {
  Tensor out = canvas;
  if (e == 0.0) return out;
  const Tensor mask = erase_mask(canvas, e, seed);
  for (std::size_t p = 0; p < out.size(); ++p) out[p] *= mask[p];
  return out;
}

Var random_erase(Var canvas, double e, std::uint64_t seed) {
  if (e == 0.0) return canvas;
  Tensor mask = erase_mask(canvas.value(), e, seed);
  return ops::mul(canvas, canvas.tape().constant(std::move(mask)));
}

Tensor guide_image(const TagParams& tag, std::size_t canvas) {
  Tensor r = render_lines(tag, canvas);
  for (float& v : r.data()) v = v >= 0.5f ? 0.0f : 1.0f;
  return r;
}

}  // namespace advtag
