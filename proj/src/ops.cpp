#include "advtag/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "advtag/errors.hpp"

namespace advtag::ops {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

[[noreturn]] void shape_error(std::string_view op, const Shape& a, const Shape& b) {
  throw ContractViolation(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                          to_string(b));
}

[[noreturn]] void shape_error(std::string_view op, const Shape& a, std::string_view want) {
  throw ContractViolation(std::string(op) + ": got shape " + to_string(a) + ", expected " +
                          std::string(want));
}

// Same GEMM blocking, hence the same summation order, on every host.
void fix_blocking() {
  static const bool done = [] {
    Eigen::setCpuCacheSizes(32 * 1024, 1024 * 1024, 8 * 1024 * 1024);
    return true;
  }();
  (void)done;
}

bool is_row_bias(const Shape& a, const Shape& b) {
  return b.size() == 1 && !a.empty() && a.back() == b[0];
}

void im2col(const float* x, std::size_t C, std::size_t H, std::size_t W, std::size_t k, float* col) {
  const std::size_t Ho = H - k + 1, Wo = W - k + 1;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        float* dst = col + ((c * k + ky) * k + kx) * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const float* src = x + (c * H + oy + ky) * W + kx;
          std::copy(src, src + Wo, dst + oy * Wo);
        }
      }
}

void col2im_add(const float* col, std::size_t C, std::size_t H, std::size_t W, std::size_t k, float* dx) {
  const std::size_t Ho = H - k + 1, Wo = W - k + 1;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const float* src = col + ((c * k + ky) * k + kx) * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          float* d = dx + (c * H + oy + ky) * W + kx;
          const float* s = src + oy * Wo;
          for (std::size_t ox = 0; ox < Wo; ++ox) d[ox] += s[ox];
        }
      }
}

template <typename F>
Tensor map_unary(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape() == B.shape()) {
    Tensor out(A.shape());
    for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i];
    return a.tape().record("add", std::move(out), {a, b}, [](BackwardArgs& g) {
      for (auto& ig : g.in_grad)
        for (std::size_t i = 0; i < ig.size(); ++i) ig[i] += g.out_grad[i];
    });
  }
  if (!is_row_bias(A.shape(), B.shape())) shape_error("add", A.shape(), B.shape());
  const std::size_t cols = B.size();
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i % cols];
  return a.tape().record("add", std::move(out), {a, b}, [cols](BackwardArgs& g) {
    if (!g.in_grad[0].empty())
      for (std::size_t i = 0; i < g.out_grad.size(); ++i) g.in_grad[0][i] += g.out_grad[i];
    if (!g.in_grad[1].empty()) {
      std::vector<double> acc(cols, 0.0);
      for (std::size_t i = 0; i < g.out_grad.size(); ++i) acc[i % cols] += g.out_grad[i];
      for (std::size_t c = 0; c < cols; ++c) g.in_grad[1][c] += static_cast<float>(acc[c]);
    }
  });
}

Var sub(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape() != B.shape()) shape_error("sub", A.shape(), B.shape());
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] - B[i];
  return a.tape().record("sub", std::move(out), {a, b}, [](BackwardArgs& g) {
    if (!g.in_grad[0].empty())
      for (std::size_t i = 0; i < g.out_grad.size(); ++i) g.in_grad[0][i] += g.out_grad[i];
    if (!g.in_grad[1].empty())
      for (std::size_t i = 0; i < g.out_grad.size(); ++i) g.in_grad[1][i] -= g.out_grad[i];
  });
}

Var mul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape() != B.shape()) shape_error("mul", A.shape(), B.shape());
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
  return a.tape().record("mul", std::move(out), {a, b}, [](BackwardArgs& g) {
    const Tensor& A = *g.in[0];
    const Tensor& B = *g.in[1];
    if (!g.in_grad[0].empty())
      for (std::size_t i = 0; i < g.out_grad.size(); ++i) g.in_grad[0][i] += g.out_grad[i] * B[i];
    if (!g.in_grad[1].empty())
      for (std::size_t i = 0; i < g.out_grad.size(); ++i) g.in_grad[1][i] += g.out_grad[i] * A[i];
  });
}

Var neg(Var a) {
  return a.tape().record("neg", map_unary(a.value(), [](float v) { return -v; }), {a},
                         [](BackwardArgs& g) {
                           for (std::size_t i = 0; i < g.out_grad.size(); ++i) g.in_grad[0][i] -= g.out_grad[i];
                         });
}

Var scale(Var a, float k) {
  return a.tape().record("scale", map_unary(a.value(), [k](float v) { return k * v; }), {a},
                         [k](BackwardArgs& g) {
                           for (std::size_t i = 0; i < g.out_grad.size(); ++i) g.in_grad[0][i] += k * g.out_grad[i];
                         });
}

Var exp(Var a) {
  return a.tape().record("exp", map_unary(a.value(), [](float v) { return std::exp(v); }), {a},
                         [](BackwardArgs& g) {
                           for (std::size_t i = 0; i < g.out_grad.size(); ++i)
                             g.in_grad[0][i] += g.out_grad[i] * g.out[i];
                         });
}

Var clamp(Var a, float lo, float hi) {
  if (!(lo <= hi)) {
    throw ContractViolation("clamp: lo (" + std::to_string(lo) + ") > hi (" + std::to_string(hi) + ")");
  }
  return a.tape().record("clamp", map_unary(a.value(), [lo, hi](float v) { return std::clamp(v, lo, hi); }),
                         {a}, [lo, hi](BackwardArgs& g) {
                           const Tensor& A = *g.in[0];
                           for (std::size_t i = 0; i < g.out_grad.size(); ++i)
                             if (A[i] >= lo && A[i] <= hi) g.in_grad[0][i] += g.out_grad[i];
                         });
}

Var relu(Var a) {
  return a.tape().record("relu", map_unary(a.value(), [](float v) { return v > 0.0f ? v : 0.0f; }), {a},
                         [](BackwardArgs& g) {
                           const Tensor& A = *g.in[0];
                           for (std::size_t i = 0; i < g.out_grad.size(); ++i)
                             if (A[i] > 0.0f) g.in_grad[0][i] += g.out_grad[i];
                         });
}

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) shape_error("matmul", A.shape(), B.shape());
  fix_blocking();
  const auto M = static_cast<Eigen::Index>(A.dim(0));
  const auto K = static_cast<Eigen::Index>(A.dim(1));
  const auto N = static_cast<Eigen::Index>(B.dim(1));
  Tensor out({A.dim(0), B.dim(1)});
  MatMap(out.data().data(), M, N).noalias() =
      ConstMatMap(A.data().data(), M, K) * ConstMatMap(B.data().data(), K, N);
  return a.tape().record("matmul", std::move(out), {a, b}, [M, K, N](BackwardArgs& g) {
    ConstMatMap dC(g.out_grad.data(), M, N);
    if (!g.in_grad[0].empty())
      MatMap(g.in_grad[0].data(), M, K).noalias() += dC * ConstMatMap(g.in[1]->data().data(), K, N).transpose();
    if (!g.in_grad[1].empty())
      MatMap(g.in_grad[1].data(), K, N).noalias() += ConstMatMap(g.in[0]->data().data(), M, K).transpose() * dC;
  });
}

Var conv2d(Var x, Var w, Var bias) {
  const Tensor& X = x.value();
  const Tensor& Wt = w.value();
  if (X.rank() != 4 || Wt.rank() != 4 || Wt.dim(1) != X.dim(1) || Wt.dim(2) != Wt.dim(3) ||
      Wt.dim(2) > X.dim(2) || Wt.dim(3) > X.dim(3)) {
    shape_error("conv2d", X.shape(), Wt.shape());
  }
  fix_blocking();
  const bool has_bias = bias.valid();
  if (has_bias && (bias.value().rank() != 1 || bias.value().dim(0) != Wt.dim(0))) {
    shape_error("conv2d(bias)", bias.value().shape(), Wt.shape());
  }
  const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  const std::size_t O = Wt.dim(0), k = Wt.dim(2);
  const std::size_t Ho = H - k + 1, Wo = W - k + 1, P = Ho * Wo, CKK = C * k * k;

  Tensor out({N, O, Ho, Wo});
  std::vector<float> col(CKK * P);
  ConstMatMap wmat(Wt.data().data(), O, CKK);
  for (std::size_t n = 0; n < N; ++n) {
    im2col(X.data().data() + n * C * H * W, C, H, W, k, col.data());
    float* y = out.data().data() + n * O * P;
    MatMap(y, O, P).noalias() = wmat * ConstMatMap(col.data(), CKK, P);
    if (has_bias) {
      const Tensor& B = bias.value();
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t p = 0; p < P; ++p) y[o * P + p] += B[o];
    }
  }

  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return x.tape().record("conv2d", std::move(out), std::move(inputs), [=](BackwardArgs& g) {
    const Tensor& X = *g.in[0];
    const Tensor& Wt = *g.in[1];
    ConstMatMap wmat(Wt.data().data(), O, CKK);
    std::vector<float> col(CKK * P);
    std::vector<float> dcol;
    for (std::size_t n = 0; n < N; ++n) {
      ConstMatMap dy(g.out_grad.data() + n * O * P, O, P);
      if (!g.in_grad[1].empty()) {
        im2col(X.data().data() + n * C * H * W, C, H, W, k, col.data());
        MatMap(g.in_grad[1].data(), O, CKK).noalias() += dy * ConstMatMap(col.data(), CKK, P).transpose();
      }
      if (!g.in_grad[0].empty()) {
        dcol.resize(CKK * P);
        MatMap(dcol.data(), CKK, P).noalias() = wmat.transpose() * dy;
        col2im_add(dcol.data(), C, H, W, k, g.in_grad[0].data() + n * C * H * W);
      }
    }
    if (has_bias && !g.in_grad[2].empty()) {
      for (std::size_t o = 0; o < O; ++o) {
        double acc = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          const float* dy = g.out_grad.data() + (n * O + o) * P;
          for (std::size_t p = 0; p < P; ++p) acc += dy[p];
        }
        g.in_grad[2][o] += static_cast<float>(acc);
      }
    }
  });
}

Var max_pool2d(Var x, std::size_t k) {
  const Tensor& X = x.value();
  if (X.rank() != 4 || k == 0 || X.dim(2) < k || X.dim(3) < k) shape_error("max_pool2d", X.shape(), "[N, C, H>=k, W>=k]");
  const std::size_t NC = X.dim(0) * X.dim(1), H = X.dim(2), W = X.dim(3);
  const std::size_t Ho = H / k, Wo = W / k;
  Tensor out({X.dim(0), X.dim(1), Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  for (std::size_t p = 0; p < NC; ++p) {
    const float* src = X.data().data() + p * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = (oy * k) * W + ox * k;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t idx = (oy * k + dy) * W + ox * k + dx;
            if (src[idx] > src[best]) best = idx;
          }
        const std::size_t o = (p * Ho + oy) * Wo + ox;
        out[o] = src[best];
        (*argmax)[o] = static_cast<std::uint32_t>(p * H * W + best);
      }
  }
  return x.tape().record("max_pool2d", std::move(out), {x}, [argmax](BackwardArgs& g) {
    for (std::size_t o = 0; o < g.out_grad.size(); ++o) g.in_grad[0][(*argmax)[o]] += g.out_grad[o];
  });
}

Var log_softmax(Var x) {
  const Tensor& X = x.value();
  if (X.rank() != 2) shape_error("log_softmax", X.shape(), "[N, C]");
  const std::size_t N = X.dim(0), C = X.dim(1);
  Tensor out(X.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const float* row = X.data().data() + n * C;
    const float m = *std::max_element(row, row + C);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += std::exp(static_cast<double>(row[c]) - m);
    const double lse = m + std::log(s);
    for (std::size_t c = 0; c < C; ++c) out[n * C + c] = static_cast<float>(row[c] - lse);
  }
  return x.tape().record("log_softmax", std::move(out), {x}, [N, C](BackwardArgs& g) {
    for (std::size_t n = 0; n < N; ++n) {
      const float* dy = g.out_grad.data() + n * C;
      double total = 0.0;
      for (std::size_t c = 0; c < C; ++c) total += dy[c];
      for (std::size_t c = 0; c < C; ++c) {
        const double p = std::exp(static_cast<double>(g.out[n * C + c]));
        g.in_grad[0][n * C + c] += static_cast<float>(dy[c] - p * total);
      }
    }
  });
}

Var nll_loss(Var log_probs, std::span<const int> targets, Reduction reduction) {
  const Tensor& L = log_probs.value();
  if (L.rank() != 2 || L.dim(0) != targets.size()) {
    shape_error("nll_loss", L.shape(), "[" + std::to_string(targets.size()) + ", C]");
  }
  const std::size_t N = L.dim(0), C = L.dim(1);
  std::vector<int> t(targets.begin(), targets.end());
  double acc = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    if (t[n] < 0 || static_cast<std::size_t>(t[n]) >= C) {
      throw ContractViolation("nll_loss: target " + std::to_string(t[n]) + " out of range [0, " +
                              std::to_string(C) + ")");
    }
    acc -= L[n * C + static_cast<std::size_t>(t[n])];
  }
  const double denom = reduction == Reduction::Mean ? static_cast<double>(N) : 1.0;
  Tensor out = Tensor::scalar(static_cast<float>(acc / denom));
  return log_probs.tape().record("nll_loss", std::move(out), {log_probs},
                                 [t = std::move(t), C, denom](BackwardArgs& g) {
                                   const float w = static_cast<float>(g.out_grad[0] / denom);
                                   for (std::size_t n = 0; n < t.size(); ++n)
                                     g.in_grad[0][n * C + static_cast<std::size_t>(t[n])] -= w;
                                 });
}

Var sum(Var x) {
  double acc = 0.0;
  for (float v : x.value().data()) acc += v;
  return x.tape().record("sum", Tensor::scalar(static_cast<float>(acc)), {x}, [](BackwardArgs& g) {
    for (float& v : g.in_grad[0]) v += g.out_grad[0];
  });
}

Var mean(Var x) {
  double acc = 0.0;
  for (float v : x.value().data()) acc += v;
  const double n = static_cast<double>(x.value().size());
  return x.tape().record("mean", Tensor::scalar(static_cast<float>(acc / n)), {x}, [n](BackwardArgs& g) {
    const float w = static_cast<float>(g.out_grad[0] / n);
    for (float& v : g.in_grad[0]) v += w;
  });
}

Var sum(std::span<const Var> scalars) {
  if (scalars.empty()) throw ContractViolation("sum: empty list of scalars");
  double acc = 0.0;
  for (const Var& v : scalars) {
    if (v.value().size() != 1) shape_error("sum(scalars)", v.value().shape(), "[1]");
    acc += v.value()[0];
  }
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  return scalars[0].tape().record("sum_n", Tensor::scalar(static_cast<float>(acc)), std::move(inputs),
                                  [](BackwardArgs& g) {
                                    for (auto& ig : g.in_grad)
                                      if (!ig.empty()) ig[0] += g.out_grad[0];
                                  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record("reshape", std::move(out), {x}, [](BackwardArgs& g) {
    for (std::size_t i = 0; i < g.out_grad.size(); ++i) g.in_grad[0][i] += g.out_grad[i];
  });
}

Tensor uniform_noise(const Shape& shape, float lo, float hi, Rng& rng) {
  Tensor out(shape);
  for (float& v : out.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return out;
}

Var add_uniform_noise(Var x, float lo, float hi, Rng& rng) {
  Var noise = x.tape().constant(uniform_noise(x.value().shape(), lo, hi, rng));
  return add(x, noise);
}

}  // namespace advtag::ops
