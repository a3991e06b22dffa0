#pragma once

// Straightforward double-precision re-implementation of the render ->
// composite -> classifier -> NLL chain, written with plain loops. Used as a
// finite-difference oracle for the tape engine.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "advtag/classifier.hpp"
#include "advtag/rasterizer.hpp"

namespace advtag::reference {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Margins {
  // Smallest distance to a kink seen during the last evaluation.
  double relu = std::numeric_limits<double>::infinity();
  double pool_tie = std::numeric_limits<double>::infinity();
  double composite = std::numeric_limits<double>::infinity();
  double cutoff = std::numeric_limits<double>::infinity();    // |d - r_cut| in px
  double line_tie = std::numeric_limits<double>::infinity();  // gap between competing lines
  double projection = std::numeric_limits<double>::infinity();  // t near 0 or 1, in px

  // Piecewise state of every kink (relu sign, pool winner, clamp side,
  // cutoff side, owning line). Two evaluations on the same smooth piece
  // produce the same pattern.
  std::vector<int> pattern;
  // Distance to the boundary of each kink in `pattern`, in that kink's own
  // units (value, or px for geometric kinks).
  std::vector<double> distance;

  void kink(int state, double dist) {
    pattern.push_back(state);
    distance.push_back(dist);
  }

  double min() const { return std::min({relu, pool_tie, composite, cutoff, line_tie, projection}); }
};

struct Dims {
  std::size_t c, h, w;
};

inline double line_intensity(const Line& l, double px, double py, double sigma, Margins* m) {
  // Canonical endpoint order, matching the rasterizer's evaluation order.
  double ax = l.x0, ay = l.y0, bx = l.x1, by = l.y1;
  if (bx < ax || (bx == ax && by < ay)) {
    std::swap(ax, bx);
    std::swap(ay, by);
  }
  const double ex = bx - ax, ey = by - ay;
  const double len_sq = ex * ex + ey * ey;
  double qx = ax, qy = ay;
  if (len_sq >= 1e-12) {
    const double raw = ((px - ax) * ex + (py - ay) * ey) / len_sq;
    const double len = std::sqrt(len_sq);
    if (m) {
      m->projection = std::min({m->projection, std::abs(raw) * len, std::abs(raw - 1.0) * len});
      m->kink(raw < 0.0 ? 0 : raw > 1.0 ? 2 : 1, std::min(std::abs(raw), std::abs(raw - 1.0)) * len);
    }
    const double t = std::clamp(raw, 0.0, 1.0);
    qx = ax + t * ex;
    qy = ay + t * ey;
  }
  const double d_sq = (px - qx) * (px - qx) + (py - qy) * (py - qy);
  const double r_cut = std::sqrt(sigma * std::log(1.0 / kKernelFloor));
  if (m) {
    m->cutoff = std::min(m->cutoff, std::abs(std::sqrt(d_sq) - r_cut));
    m->kink(d_sq > r_cut * r_cut, std::abs(std::sqrt(d_sq) - r_cut));
  }
  if (d_sq > r_cut * r_cut) return 0.0;
  return std::exp(-d_sq / sigma);
}

inline std::vector<double> render(const std::vector<Line>& lines, double sigma, std::size_t s, Margins* m = nullptr) {
  std::vector<double> out(s * s, 0.0);
  std::vector<double> second(s * s, 0.0);
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      double best = 0.0, runner = 0.0;
      int owner = -1;
      for (std::size_t i = 0; i < lines.size(); ++i) {
        const double v = line_intensity(lines[i], x + 0.5, y + 0.5, sigma, m);
        if (v > best) {
          runner = best;
          best = v;
          owner = static_cast<int>(i);
        } else {
          runner = std::max(runner, v);
        }
      }
      out[y * s + x] = best;
      if (m) m->kink(owner, lines.size() > 1 && best > 0.0 ? best - runner : kInf);
      if (m && lines.size() > 1 && best > 0.0) m->line_tie = std::min(m->line_tie, best - runner);
    }
  return out;
}

inline std::vector<double> composite(const std::vector<double>& image, const std::vector<double>& canvas,
                                     Margins* m = nullptr) {
  const std::size_t plane = canvas.size();
  std::vector<double> out(image.size());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      const double d = image[c * plane + p] - canvas[p];
      if (m && canvas[p] > 0.0) m->composite = std::min({m->composite, std::abs(d), std::abs(d - 1.0)});
      if (m) m->kink(d < 0.0 ? 0 : d > 1.0 ? 2 : 1, canvas[p] > 0.0 ? std::min(std::abs(d), std::abs(d - 1.0)) : kInf);
      out[c * plane + p] = std::clamp(d, 0.0, 1.0);
    }
  return out;
}

class Model {
 public:
  explicit Model(const ClassifierModel& model) : s_(model.input_size()), classes_(model.num_classes()) {
    for (const Tensor& t : model.weights()) w_.emplace_back(t.data().begin(), t.data().end());
  }

  // Log-probabilities for one [3, s, s] image.
  std::vector<double> log_probs(const std::vector<double>& image, Margins* m = nullptr) const {
    Dims d{3, s_, s_};
    std::vector<double> h = conv(image, d, w_[0], w_[1], 16, m);
    h = pool(h, d, m);
    h = conv(h, d, w_[2], w_[3], 32, m);
    h = pool(h, d, m);
    const std::size_t f = h.size();
    std::vector<double> z1(64, 0.0);
    for (std::size_t j = 0; j < 64; ++j) {
      double acc = w_[5][j];
      for (std::size_t i = 0; i < f; ++i) acc += h[i] * w_[4][i * 64 + j];
      if (m) {
        m->relu = std::min(m->relu, std::abs(acc));
        m->kink(acc > 0.0, std::abs(acc));
      }
      z1[j] = std::max(acc, 0.0);
    }
    std::vector<double> z2(classes_, 0.0);
    for (std::size_t j = 0; j < classes_; ++j) {
      double acc = w_[7][j];
      for (std::size_t i = 0; i < 64; ++i) acc += z1[i] * w_[6][i * classes_ + j];
      z2[j] = acc;
    }
    const double mx = *std::max_element(z2.begin(), z2.end());
    double sum = 0.0;
    for (double v : z2) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    for (double& v : z2) v -= lse;
    return z2;
  }

 private:
  // Valid 3x3 convolution followed by relu.
  std::vector<double> conv(const std::vector<double>& x, Dims& d, const std::vector<float>& w,
                           const std::vector<float>& b, std::size_t out_c, Margins* m) const {
    const std::size_t ho = d.h - 2, wo = d.w - 2;
    std::vector<double> y(out_c * ho * wo);
    for (std::size_t o = 0; o < out_c; ++o)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double acc = b[o];
          for (std::size_t c = 0; c < d.c; ++c)
            for (std::size_t ki = 0; ki < 3; ++ki)
              for (std::size_t kj = 0; kj < 3; ++kj)
                acc += x[(c * d.h + i + ki) * d.w + j + kj] * w[((o * d.c + c) * 3 + ki) * 3 + kj];
          if (m) {
            m->relu = std::min(m->relu, std::abs(acc));
            m->kink(acc > 0.0, std::abs(acc));
          }
          y[(o * ho + i) * wo + j] = std::max(acc, 0.0);
        }
    d = {out_c, ho, wo};
    return y;
  }

  std::vector<double> pool(const std::vector<double>& x, Dims& d, Margins* m) const {
    const std::size_t ho = d.h / 2, wo = d.w / 2;
    std::vector<double> y(d.c * ho * wo);
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double best = -std::numeric_limits<double>::infinity(), runner = best;
          int arg = 0;
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b) {
              const double v = x[(c * d.h + 2 * i + a) * d.w + 2 * j + b];
              if (v > best) {
                runner = best;
                best = v;
                arg = static_cast<int>(2 * a + b);
              } else {
                runner = std::max(runner, v);
              }
            }
          // A runner-up clamped to zero by relu is a relu kink, not a tie.
          if (m && runner > 0.0) m->pool_tie = std::min(m->pool_tie, best - runner);
          if (m) m->kink(best > 0.0 ? arg : -1, runner > 0.0 ? best - runner : kInf);
          y[(c * ho + i) * wo + j] = best;
        }
    d = {d.c, ho, wo};
    return y;
  }

  std::size_t s_, classes_;
  std::vector<std::vector<float>> w_;
};

inline std::vector<double> to_double(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// NLL of `target` for the clean composite of `lines` on `image`.
inline double nll(const Model& model, const std::vector<Line>& lines, double sigma, const std::vector<double>& image,
                  std::size_t s, int target, Margins* m = nullptr) {
  const std::vector<double> x = composite(image, render(lines, sigma, s, m), m);
  return -model.log_probs(x, m)[static_cast<std::size_t>(target)];
}

// Central differences of nll over the 4 coordinates of lines[which].
inline std::vector<double> finite_difference(const Model& model, std::vector<Line> lines, std::size_t which,
                                             double sigma, const std::vector<double>& image, std::size_t s, int target,
                                             double h) {
  std::vector<double> g(4);
  for (std::size_t k = 0; k < 4; ++k) {
    float* c[4] = {&lines[which].x0, &lines[which].y0, &lines[which].x1, &lines[which].y1};
    const float orig = *c[k];
    *c[k] = static_cast<float>(orig + h);
    const double up_delta = static_cast<double>(*c[k]) - orig;
    const double up = nll(model, lines, sigma, image, s, target);
    *c[k] = static_cast<float>(orig - h);
    const double down_delta = orig - static_cast<double>(*c[k]);
    const double down = nll(model, lines, sigma, image, s, target);
    *c[k] = orig;
    g[k] = (up - down) / (up_delta + down_delta);
  }
  return g;
}

}  // namespace advtag::reference
