#pragma once

#include <span>

#include "advtag/rng.hpp"
#include "advtag/tensor.hpp"

// Differentiable primitives recorded on a Tape. All ops throw
// ContractViolation on nonconforming shapes, naming the op and the shapes.
namespace advtag::ops {

enum class Reduction { Mean, Sum };

// Elementwise; b may also be a rank-1 tensor matching a's last extent (row bias).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, float k);
Var exp(Var a);
// Subgradient: passes through on the closed interval [lo, hi], zero outside.
Var clamp(Var a, float lo, float hi);
Var relu(Var a);

// [M, K] x [K, N] -> [M, N]
Var matmul(Var a, Var b);
// x [N, C, H, W], w [O, C, k, k], bias [O] (or an invalid Var for none).
// Stride 1, no padding.
Var conv2d(Var x, Var w, Var bias);
// Non-overlapping k x k windows, floor on odd extents. Ties go to the first
// element in row-major order.
Var max_pool2d(Var x, std::size_t k);

// Row-wise over the last axis of a [N, C] tensor.
Var log_softmax(Var x);
Var nll_loss(Var log_probs, std::span<const int> targets, Reduction reduction = Reduction::Mean);

Var sum(Var x);
Var mean(Var x);
// Sum of scalar vars, accumulated in double.
Var sum(std::span<const Var> scalars);

Var reshape(Var x, Shape shape);

// Non-differentiable source: U(lo, hi) values drawn in row-major order.
Tensor uniform_noise(const Shape& shape, float lo, float hi, Rng& rng);
// x + U(lo, hi); the noise is a constant on the tape.
Var add_uniform_noise(Var x, float lo, float hi, Rng& rng);

}  // namespace advtag::ops
