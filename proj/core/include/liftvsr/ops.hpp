#pragma once

#include <span>
#include <vector>

#include "liftvsr/tensor.hpp"

// Differentiable operations over float64 tensors. Every op validates shapes and
// throws DimensionError / ConfigError on mismatch.
namespace liftvsr::ad {

// --- linear algebra -------------------------------------------------------

// [m,k] x [k,p] -> [m,p]
Tensor matmul(const Tensor& a, const Tensor& b);

// Applies w [k,p] to the last axis of x [...,k] -> [...,p].
Tensor linear(const Tensor& x, const Tensor& w);

// Batched product [B,m,k] x [B,k,p] -> [B,m,p]; with transpose_b the second
// operand is [B,p,k] and is used transposed.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

// --- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
// a * x + b
Tensor affine(const Tensor& x, double a, double b);
// x [...,k] + bias [k]
Tensor add_bias(const Tensor& x, const Tensor& bias);
// x [...,k] * s [k]
Tensor mul_bias(const Tensor& x, const Tensor& s);
// x * alpha, alpha a single-element tensor.
Tensor mul_scalar(const Tensor& x, const Tensor& alpha);

Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);

// Normalizes each vector along the last axis to zero mean and unit variance
// (no affine).
Tensor layer_norm(const Tensor& x, double eps = 1e-12);

// Softmax along the last axis, max-subtracted.
Tensor softmax(const Tensor& x);

// Averages n leading-axis slices into `groups` contiguous groups of
// floor(n / groups) slices; the last group also takes the remainder.
Tensor mean_pool_temporal(const Tensor& x, std::size_t groups);

// --- layout -------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
// out[j] = x[indices[j]] along axis 0; repeated indices accumulate gradient.
Tensor gather_leading(const Tensor& x, std::span<const std::size_t> indices);

// --- spatial ------------------------------------------------------------------

// Samples src [n,h,w,c] at (x + flow_x, y + flow_y) with bilinear weights and
// clamp-to-edge borders. flow is [n,h,w,2g]; channel group j of src (c/g
// channels each) uses flow channels (2j, 2j+1). g == 1 is the plain warp.
Tensor bilinear_warp(const Tensor& src, const Tensor& flow);

// Per-frame cross-correlation with zero "same" padding. kernel is
// [kh,kw,cin,cout] with odd kh, kw.
Tensor conv2d(const Tensor& x, const Tensor& kernel);

// Rotary embedding of x [B,T,D] (D even); positions holds B*T positions.
Tensor rope(const Tensor& x, std::span<const double> positions, double base = 10000.0);

// --- reductions ---------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean of squared differences.
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace liftvsr::ad
