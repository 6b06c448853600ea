#pragma once

// Scalar-loop reference implementations used to cross-check the library's
// vectorised operators. They work on plain double tensors and never call the
// operators they are checking.

#include <algorithm>
#include <cmath>

#include "msdn/parameter.hpp"
#include "support.hpp"

namespace msdn::testing {

using D = Tensor<double>;

inline D from_vector(const Shape& shape, const std::vector<double>& v) {
  Buffer<double> b(static_cast<Index>(v.size()));
  std::copy(v.begin(), v.end(), b.data());
  return D::from_buffer(shape, std::move(b));
}

inline D conv_ref(const D& x, const ConvLayer<double>& layer) {
  return from_vector(Shape{x.dim(0), layer.out_channels(), x.dim(2), x.dim(3)},
                     conv_oracle(x, layer.weight, layer.bias));
}

template <typename F>
D map_ref(const D& x, F f) {
  std::vector<double> v(x.numel());
  for (Index i = 0; i < x.numel(); ++i) v[i] = f(x[i]);
  return from_vector(x.shape(), v);
}

inline D relu_ref(const D& x) {
  return map_ref(x, [](double v) { return v > 0 ? v : 0.0; });
}
inline D sigmoid_ref(const D& x) {
  return map_ref(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}
inline D prelu_ref(const D& x, double a) {
  return map_ref(x, [a](double v) { return v > 0 ? v : a * v; });
}

inline D add_ref(const D& a, const D& b) {
  std::vector<double> v(a.numel());
  for (Index i = 0; i < a.numel(); ++i) v[i] = a[i] + b[i];
  return from_vector(a.shape(), v);
}

// (n, c, h, w) times a per-(n, c) gate of shape (n, c, 1, 1).
inline D gate_ref(const D& x, const D& gate) {
  std::vector<double> v(x.numel());
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < c; ++k)
      for (Index p = 0; p < hw; ++p) v[(i * c + k) * hw + p] = x[(i * c + k) * hw + p] * gate[i * c + k];
  return from_vector(x.shape(), v);
}

// (n, c, h, w) times a per-pixel gate of shape (n, 1, h, w).
inline D pixel_gate_ref(const D& x, const D& gate) {
  std::vector<double> v(x.numel());
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < c; ++k)
      for (Index p = 0; p < hw; ++p) v[(i * c + k) * hw + p] = x[(i * c + k) * hw + p] * gate[i * hw + p];
  return from_vector(x.shape(), v);
}

// Channel mean (channel 0) and channel max (channel 1) maps, (n, 2, h, w).
inline D mean_max_ref(const D& x) {
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> v(n * 2 * hw);
  for (Index i = 0; i < n; ++i)
    for (Index p = 0; p < hw; ++p) {
      double s = 0, m = -INFINITY;
      for (Index k = 0; k < c; ++k) {
        s += x[(i * c + k) * hw + p];
        m = std::max(m, x[(i * c + k) * hw + p]);
      }
      v[(i * 2) * hw + p] = s / double(c);
      v[(i * 2 + 1) * hw + p] = m;
    }
  return from_vector(Shape{n, 2, x.dim(2), x.dim(3)}, v);
}

inline D channel_means_ref(const D& x) {
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<double> v(n * c);
  for (Index i = 0; i < n * c; ++i) {
    double s = 0;
    for (Index p = 0; p < hw; ++p) s += x[i * hw + p];
    v[i] = s / double(hw);
  }
  return from_vector(Shape{n, c, 1, 1}, v);
}

inline D channel_sum_of_products_ref(const D& a, const D& b) {
  const Index n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<double> v(n * hw, 0.0);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < c; ++k)
      for (Index p = 0; p < hw; ++p) v[i * hw + p] += a[(i * c + k) * hw + p] * b[(i * c + k) * hw + p];
  return from_vector(Shape{n, 1, a.dim(2), a.dim(3)}, v);
}

// Memory tiles broadcast over the batch and multiplied with the query.
inline D memory_product_ref(const D& items, int s, const D& query) {
  const Index n = query.dim(0), slots = query.dim(1), h = query.dim(2), w = query.dim(3);
  std::vector<double> v(query.numel());
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < slots; ++k)
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
          const Index at = ((i * slots + k) * h + y) * w + x;
          v[at] = query[at] * items[k * s * s + (y % s) * s + (x % s)];
        }
  return from_vector(query.shape(), v);
}

}  // namespace msdn::testing
