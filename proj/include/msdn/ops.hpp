#pragma once

#include <initializer_list>
#include <vector>

#include "msdn/tensor.hpp"

// Differentiable primitives. Spatial operators act on the two innermost axes
// and treat every leading index as an independent plane.
namespace msdn {

// Cross-correlation, stride 1, zero padding floor(k/2).
// input (n, cin, h, w), weight (cout, cin, k, k), bias (cout).
template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias);

// x if x > 0 else slope * x; slope has one value or one per channel (axis 1).
template <typename S>
Tensor<S> prelu(const Tensor<S>& x, const Tensor<S>& slope);

template <typename S>
Tensor<S> relu(const Tensor<S>& x);

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x);

template <typename S>
Tensor<S> abs(const Tensor<S>& x);

// Binary ops broadcast b over a: b is right-aligned against a and each of its
// extents must match a's or be 1. The result has a's shape.
template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);

template <typename S>
Tensor<S> neg(const Tensor<S>& x);
template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor);

enum class ReduceOp { kSum, kMean, kMax };

// Reduces over the listed axes. Removed axes disappear unless keepdim; a full
// reduction without keepdim yields shape (1).
template <typename S>
Tensor<S> reduce(const Tensor<S>& x, std::vector<int> axes, ReduceOp op, bool keepdim = false);

template <typename S>
Tensor<S> sum(const Tensor<S>& x);
template <typename S>
Tensor<S> mean(const Tensor<S>& x);

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, const Shape& shape);

// Separable Catmull-Rom (a = -0.5) resampling with half-pixel centres and
// edge-clamped taps. Constant planes are reproduced exactly.
template <typename S>
Tensor<S> bicubic_upsample(const Tensor<S>& x, int factor);

// k x k mean filter with replicated borders; k must be odd.
template <typename S>
Tensor<S> box_filter(const Tensor<S>& x, int k);

// Joins along the channel axis (axis rank-3); a's channels come first.
template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b);

// 2x2 mean pooling with stride 2.
template <typename S>
Tensor<S> avg_pool2(const Tensor<S>& x);

// Pixel replication by an integer factor.
template <typename S>
Tensor<S> upsample_nearest(const Tensor<S>& x, int factor);

// Mirrors the innermost (horizontal) or second innermost (vertical) axis.
template <typename S>
Tensor<S> flip(const Tensor<S>& x, bool horizontal);

}  // namespace msdn
