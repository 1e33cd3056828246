#pragma once

#include <cstdint>
#include <random>

#include "stmotion/tape.hpp"
#include "stmotion/tensor.hpp"

STMOTION_BEGIN_NAMESPACE
namespace nd {

using Rng = std::mt19937_64;

// Differentiable operations. Each records its backward rule on the active
// tape when any input requires a gradient. Binary elementwise operations
// broadcast with numpy semantics (shapes aligned from the right).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Real factor);

/// Batched matrix product over the last two axes with broadcast leading
/// axes: [..., P, Q] x [..., Q, R] -> [..., P, R]. With transpose_b the
/// second operand is read as [..., R, Q]. The product is multiplied by alpha.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false, Real alpha = Real(1));

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
/// Sums out one axis (the axis is removed from the shape).
Tensor sum_axis(const Tensor& x, std::size_t axis);
/// Sum of all elements as a shape-{1} tensor.
Tensor sum(const Tensor& x);

Tensor relu(const Tensor& x);

/// Softmax over the last axis, max-subtracted. If `additive_mask` is defined
/// it must have the shape of the last two axes of x and is added first.
Tensor softmax_lastdim(const Tensor& x, const Tensor& additive_mask = {});

/// Alternative attention normaliser: relu(x) restricted to entries where
/// keep_mask (shape of the last two axes, values 0/1) is nonzero, divided by
/// the row sum. Rows whose sum is below 1e-8 fall back to a uniform
/// distribution over kept entries (zero gradient for those rows).
Tensor sum_normalize_lastdim(const Tensor& x, const Tensor& keep_mask = {});

inline constexpr Real kLayerNormEpsilon = Real(1e-5);

/// Normalises each last-axis slice to zero mean and unit variance, then
/// applies gain and bias (both shaped like the last axis).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

/// Inverted dropout. Identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

/// Euclidean norm over the last axis; subgradient 0 where the norm is 0.
Tensor norm_lastdim(const Tensor& x);

/// max over elements of |analytic - central| / (|analytic| + |central| + 1e-8)
/// for a scalar function f at x. x must require grad.
template <class F>
double finite_diff_check(F&& f, Tensor& x, double step);

}  // namespace nd
STMOTION_END_NAMESPACE

#include "stmotion/detail/finite_diff.hpp"
