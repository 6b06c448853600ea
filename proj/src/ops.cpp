#include "msdn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace msdn {

namespace {

template <typename S>
using Node = detail::Node<S>;

template <typename S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
using ConstMatrixMap = Eigen::Map<const RowMajorMatrix<S>>;

template <typename S>
using MatrixMap = Eigen::Map<RowMajorMatrix<S>>;

void require_rank(const Shape& s, int rank, const char* op) {
  if (s.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got " + s.str());
  }
}

void require_spatial(const Shape& s, const char* op) {
  if (s.rank() < 2) throw ShapeError(std::string(op) + ": needs at least 2 axes, got " + s.str());
}

// ---- convolution -----------------------------------------------------------

template <typename S>
void im2col(const S* x, Index channels, Index h, Index w, int k, S* col) {
  const int pad = k / 2;
  const Index hw = h * w;
  for (Index c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        S* dst = col + ((c * k + ky) * k + kx) * hw;
        for (Index y = 0; y < h; ++y) {
          const Index sy = y + ky - pad;
          S* row = dst + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(row, row + w, S(0));
            continue;
          }
          const S* src = x + (c * h + sy) * w;
          for (Index xx = 0; xx < w; ++xx) {
            const Index sx = xx + kx - pad;
            row[xx] = (sx >= 0 && sx < w) ? src[sx] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im(const S* col, Index channels, Index h, Index w, int k, S* x) {
  const int pad = k / 2;
  const Index hw = h * w;
  for (Index c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const S* src = col + ((c * k + ky) * k + kx) * hw;
        for (Index y = 0; y < h; ++y) {
          const Index sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          S* dst = x + (c * h + sy) * w;
          const S* row = src + y * w;
          for (Index xx = 0; xx < w; ++xx) {
            const Index sx = xx + kx - pad;
            if (sx >= 0 && sx < w) dst[sx] += row[xx];
          }
        }
      }
    }
  }
}

// ---- broadcasting ------------------------------------------------------------

struct Broadcast {
  std::array<Index, 4> extent{1, 1, 1, 1};
  std::array<Index, 4> b_stride{0, 0, 0, 0};
  bool same = false;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast plan;
  if (a == b) {
    plan.same = true;
    return plan;
  }
  const auto fail = [&] {
    throw ShapeError(std::string(op) + ": cannot broadcast " + b.str() + " over " + a.str());
  };
  if (b.rank() > a.rank()) fail();
  std::array<Index, 4> bext{1, 1, 1, 1};
  for (int i = 0; i < a.rank(); ++i) plan.extent[4 - a.rank() + i] = a[i];
  for (int i = 0; i < b.rank(); ++i) bext[4 - b.rank() + i] = b[i];
  Index stride = 1;
  for (int d = 3; d >= 0; --d) {
    if (bext[d] == plan.extent[d]) {
      plan.b_stride[d] = stride;
    } else if (bext[d] == 1) {
      plan.b_stride[d] = 0;
    } else {
      fail();
    }
    stride *= bext[d];
  }
  return plan;
}

template <typename F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  Index ia = 0;
  for (Index i0 = 0; i0 < p.extent[0]; ++i0)
    for (Index i1 = 0; i1 < p.extent[1]; ++i1)
      for (Index i2 = 0; i2 < p.extent[2]; ++i2) {
        const Index base = i0 * p.b_stride[0] + i1 * p.b_stride[1] + i2 * p.b_stride[2];
        for (Index i3 = 0; i3 < p.extent[3]; ++i3) f(ia++, base + i3 * p.b_stride[3]);
      }
}

enum class BinaryKind { kAdd, kSub, kMul };

template <typename S>
Tensor<S> binary(const Tensor<S>& a, const Tensor<S>& b, BinaryKind kind, const char* name) {
  const Broadcast plan = plan_broadcast(a.shape(), b.shape(), name);
  Buffer<S> out(a.numel());
  if (plan.same) {
    switch (kind) {
      case BinaryKind::kAdd: out = a.data() + b.data(); break;
      case BinaryKind::kSub: out = a.data() - b.data(); break;
      case BinaryKind::kMul: out = a.data() * b.data(); break;
    }
  } else {
    const S* pa = a.raw();
    const S* pb = b.raw();
    S* po = out.data();
    switch (kind) {
      case BinaryKind::kAdd:
        for_each_broadcast(plan, [&](Index i, Index j) { po[i] = pa[i] + pb[j]; });
        break;
      case BinaryKind::kSub:
        for_each_broadcast(plan, [&](Index i, Index j) { po[i] = pa[i] - pb[j]; });
        break;
      case BinaryKind::kMul:
        for_each_broadcast(plan, [&](Index i, Index j) { po[i] = pa[i] * pb[j]; });
        break;
    }
  }
  return Tensor<S>::make(a.shape(), std::move(out), {a, b}, [plan, kind](const Node<S>& self) {
    Node<S>& na = *self.parents[0];
    Node<S>& nb = *self.parents[1];
    const Buffer<S>& g = self.grad;
    if (plan.same) {
      if (kind == BinaryKind::kMul) {
        if (na.requires_grad) na.accumulate(g * nb.data);
        if (nb.requires_grad) nb.accumulate(g * na.data);
      } else {
        na.accumulate(g);
        if (nb.requires_grad) nb.accumulate(kind == BinaryKind::kAdd ? Buffer<S>(g) : Buffer<S>(-g));
      }
      return;
    }
    if (na.requires_grad) {
      if (kind == BinaryKind::kMul) {
        Buffer<S>& ga = na.grad_slot();
        const S* pb = nb.data.data();
        for_each_broadcast(plan, [&](Index i, Index j) { ga[i] += g[i] * pb[j]; });
      } else {
        na.accumulate(g);
      }
    }
    if (nb.requires_grad) {
      Buffer<S>& gb = nb.grad_slot();
      const S* pa = na.data.data();
      switch (kind) {
        case BinaryKind::kAdd:
          for_each_broadcast(plan, [&](Index i, Index j) { gb[j] += g[i]; });
          break;
        case BinaryKind::kSub:
          for_each_broadcast(plan, [&](Index i, Index j) { gb[j] -= g[i]; });
          break;
        case BinaryKind::kMul:
          for_each_broadcast(plan, [&](Index i, Index j) { gb[j] += g[i] * pa[i]; });
          break;
      }
    }
  });
}

// ---- resampling helpers ------------------------------------------------------

template <typename S>
struct Taps {
  std::array<Index, 4> index;
  std::array<S, 4> weight;
};

double catmull_rom(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

template <typename S>
std::vector<Taps<S>> cubic_taps(Index in, int factor) {
  std::vector<Taps<S>> taps(static_cast<std::size_t>(in * factor));
  for (Index o = 0; o < in * factor; ++o) {
    const double u = (static_cast<double>(o) + 0.5) / factor - 0.5;
    const double base = std::floor(u);
    const double t = u - base;
    const auto i0 = static_cast<Index>(base);
    Taps<S>& tp = taps[static_cast<std::size_t>(o)];
    const double w[4] = {catmull_rom(t + 1.0), catmull_rom(t), catmull_rom(1.0 - t),
                         catmull_rom(2.0 - t)};
    for (int k = 0; k < 4; ++k) {
      tp.index[k] = std::clamp<Index>(i0 - 1 + k, 0, in - 1);
      tp.weight[k] = static_cast<S>(w[k]);
    }
  }
  return taps;
}

// Mean of a clamped 1-D window, written relative to the centre sample so a
// constant signal maps to itself bit-exactly.
template <typename S>
void box_pass(const S* src, S* dst, Index planes, Index rows, Index cols, int k, bool along_rows) {
  const int r = k / 2;
  const S inv = S(1) / static_cast<S>(k);
  for (Index p = 0; p < planes; ++p) {
    const S* x = src + p * rows * cols;
    S* y = dst + p * rows * cols;
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j) {
        const S centre = x[i * cols + j];
        S acc = 0;
        for (int d = -r; d <= r; ++d) {
          const Index si = along_rows ? i : std::clamp<Index>(i + d, 0, rows - 1);
          const Index sj = along_rows ? std::clamp<Index>(j + d, 0, cols - 1) : j;
          acc += x[si * cols + sj] - centre;
        }
        y[i * cols + j] = centre + acc * inv;
      }
    }
  }
}

template <typename S>
void box_pass_adjoint(const S* g, S* gx, Index planes, Index rows, Index cols, int k,
                      bool along_rows) {
  const int r = k / 2;
  const S inv = S(1) / static_cast<S>(k);
  for (Index p = 0; p < planes; ++p) {
    const S* gp = g + p * rows * cols;
    S* gxp = gx + p * rows * cols;
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j) {
        const S v = gp[i * cols + j] * inv;
        for (int d = -r; d <= r; ++d) {
          const Index si = along_rows ? i : std::clamp<Index>(i + d, 0, rows - 1);
          const Index sj = along_rows ? std::clamp<Index>(j + d, 0, cols - 1) : j;
          gxp[si * cols + sj] += v;
        }
      }
    }
  }
}

template <typename S, typename F>
Tensor<S> unary(const Tensor<S>& x, Buffer<S> out, F&& local_grad) {
  return Tensor<S>::make(x.shape(), std::move(out), {x},
                         [local_grad](const Node<S>& self) {
                           Node<S>& nx = *self.parents[0];
                           nx.accumulate(local_grad(nx.data, self.data) * self.grad);
                         });
}

}  // namespace

// ---- public ops --------------------------------------------------------------

template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias) {
  require_rank(input.shape(), 4, "conv2d");
  require_rank(weight.shape(), 4, "conv2d weight");
  const Index n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index cout = weight.dim(0);
  const int k = static_cast<int>(weight.dim(2));
  if (weight.dim(1) != cin) {
    throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels, layer expects " +
                     std::to_string(weight.dim(1)));
  }
  if (weight.dim(3) != k || k % 2 == 0) throw ShapeError("conv2d: kernel must be square and odd");
  if (bias.numel() != cout) throw ShapeError("conv2d: bias length must equal output channels");

  const Index hw = h * w;
  const Index ckk = cin * k * k;
  Buffer<S> out(n * cout * hw);
  ConstMatrixMap<S> wm(weight.raw(), cout, ckk);
  const Eigen::Map<const Vector<S>> bv(bias.raw(), cout);
  RowMajorMatrix<S> col(k == 1 ? 0 : ckk, k == 1 ? 0 : hw);
  for (Index b = 0; b < n; ++b) {
    const S* xb = input.raw() + b * cin * hw;
    MatrixMap<S> o(out.data() + b * cout * hw, cout, hw);
    if (k == 1) {
      o.noalias() = wm * ConstMatrixMap<S>(xb, cin, hw);
    } else {
      im2col(xb, cin, h, w, k, col.data());
      o.noalias() = wm * col;
    }
    o.colwise() += bv;
  }

  return Tensor<S>::make(
      Shape{n, cout, h, w}, std::move(out), {input, weight, bias},
      [=](const Node<S>& self) {
        Node<S>& nx = *self.parents[0];
        Node<S>& nw = *self.parents[1];
        Node<S>& nb = *self.parents[2];
        ConstMatrixMap<S> wmat(nw.data.data(), cout, ckk);
        S* gw = nw.requires_grad ? nw.grad_slot().data() : nullptr;
        S* gb = nb.requires_grad ? nb.grad_slot().data() : nullptr;
        S* gx = nx.requires_grad ? nx.grad_slot().data() : nullptr;
        RowMajorMatrix<S> cols(k == 1 ? 0 : ckk, k == 1 ? 0 : hw);
        RowMajorMatrix<S> dcol;
        for (Index b = 0; b < n; ++b) {
          ConstMatrixMap<S> g(self.grad.data() + b * cout * hw, cout, hw);
          const S* xb = nx.data.data() + b * cin * hw;
          if (gw) {
            MatrixMap<S> dw(gw, cout, ckk);
            if (k == 1) {
              dw.noalias() += g * ConstMatrixMap<S>(xb, cin, hw).transpose();
            } else {
              im2col(xb, cin, h, w, k, cols.data());
              dw.noalias() += g * cols.transpose();
            }
          }
          if (gb) Eigen::Map<Vector<S>>(gb, cout) += g.rowwise().sum();
          if (gx) {
            if (k == 1) {
              MatrixMap<S>(gx + b * cin * hw, cin, hw).noalias() += wmat.transpose() * g;
            } else {
              dcol.noalias() = wmat.transpose() * g;
              col2im(dcol.data(), cin, h, w, k, gx + b * cin * hw);
            }
          }
        }
      });
}

template <typename S>
Tensor<S> prelu(const Tensor<S>& x, const Tensor<S>& slope) {
  const Index ns = slope.numel();
  Index channels = 1, inner = x.numel(), outer = 1;
  if (ns != 1) {
    if (x.rank() < 3 || x.dim(-3) != ns) {
      throw ShapeError("prelu: slope of " + std::to_string(ns) + " values for input " +
                       x.shape().str());
    }
    channels = ns;
    inner = x.dim(-1) * x.dim(-2);
    outer = x.numel() / (channels * inner);
  }
  Buffer<S> out(x.numel());
  const S* px = x.raw();
  for (Index o = 0; o < outer; ++o)
    for (Index c = 0; c < channels; ++c) {
      const S a = slope[c];
      const Index base = (o * channels + c) * inner;
      for (Index i = 0; i < inner; ++i) {
        const S v = px[base + i];
        out[base + i] = v > S(0) ? v : a * v;
      }
    }
  return Tensor<S>::make(x.shape(), std::move(out), {x, slope}, [=](const Node<S>& self) {
    Node<S>& nx = *self.parents[0];
    Node<S>& na = *self.parents[1];
    S* gx = nx.requires_grad ? nx.grad_slot().data() : nullptr;
    S* ga = na.requires_grad ? na.grad_slot().data() : nullptr;
    const S* xv = nx.data.data();
    for (Index o = 0; o < outer; ++o)
      for (Index c = 0; c < channels; ++c) {
        const S a = na.data[c];
        const Index base = (o * channels + c) * inner;
        for (Index i = 0; i < inner; ++i) {
          const S v = xv[base + i];
          const S g = self.grad[base + i];
          if (v > S(0)) {
            if (gx) gx[base + i] += g;
          } else {
            if (gx) gx[base + i] += a * g;
            if (ga) ga[c] += v * g;
          }
        }
      }
  });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return unary(x, Buffer<S>(x.data().max(S(0))), [](const Buffer<S>& in, const Buffer<S>&) {
    return Buffer<S>((in > S(0)).template cast<S>());
  });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  Buffer<S> out = x.data().unaryExpr([](S v) {
    if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
    const S e = std::exp(v);
    return e / (S(1) + e);
  });
  return unary(x, std::move(out), [](const Buffer<S>&, const Buffer<S>& y) {
    return Buffer<S>(y * (S(1) - y));
  });
}

template <typename S>
Tensor<S> abs(const Tensor<S>& x) {
  return unary(x, Buffer<S>(x.data().abs()), [](const Buffer<S>& in, const Buffer<S>&) {
    return Buffer<S>(in.sign());
  });
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return binary(a, b, BinaryKind::kAdd, "add");
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return binary(a, b, BinaryKind::kSub, "sub");
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return binary(a, b, BinaryKind::kMul, "mul");
}

template <typename S>
Tensor<S> neg(const Tensor<S>& x) {
  return Tensor<S>::make(x.shape(), Buffer<S>(-x.data()), {x}, [](const Node<S>& self) {
    self.parents[0]->accumulate(-self.grad);
  });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
  return Tensor<S>::make(x.shape(), Buffer<S>(x.data() * factor), {x},
                         [factor](const Node<S>& self) {
                           self.parents[0]->accumulate(self.grad * factor);
                         });
}

template <typename S>
Tensor<S> reduce(const Tensor<S>& x, std::vector<int> axes, ReduceOp op, bool keepdim) {
  const Shape& s = x.shape();
  if (axes.empty()) throw ShapeError("reduce: no axes given");
  std::array<bool, 4> reduced{false, false, false, false};
  for (int& a : axes) reduced[static_cast<std::size_t>(s.normalize_axis(a))] = true;

  std::array<Index, 4> ext{1, 1, 1, 1};
  std::array<Index, 4> out_stride{0, 0, 0, 0};
  std::vector<Index> kept_dims;
  std::vector<Index> keep_shape;
  const int pad = 4 - s.rank();
  for (int i = 0; i < s.rank(); ++i) ext[pad + i] = s[i];
  Index stride = 1;
  Index count = 1;
  for (int i = s.rank() - 1; i >= 0; --i) {
    if (reduced[i]) {
      count *= s[i];
    } else {
      out_stride[pad + i] = stride;
      stride *= s[i];
    }
  }
  for (int i = 0; i < s.rank(); ++i) {
    if (!reduced[i]) kept_dims.push_back(s[i]);
    keep_shape.push_back(reduced[i] ? 1 : s[i]);
  }
  if (kept_dims.empty()) kept_dims.push_back(1);
  const Shape out_shape = keepdim ? Shape(std::span<const Index>(keep_shape))
                                  : Shape(std::span<const Index>(kept_dims));
  const Index out_n = out_shape.numel();

  // Visits (input flat index, output flat index) pairs in input order.
  const auto visit = [ext, out_stride](auto&& f) {
    Index i = 0;
    for (Index a = 0; a < ext[0]; ++a)
      for (Index b = 0; b < ext[1]; ++b)
        for (Index c = 0; c < ext[2]; ++c) {
          const Index base = a * out_stride[0] + b * out_stride[1] + c * out_stride[2];
          for (Index d = 0; d < ext[3]; ++d) f(i++, base + d * out_stride[3]);
        }
  };

  const S* px = x.raw();
  Buffer<S> out;
  std::vector<Index> argmax;
  if (op == ReduceOp::kMax) {
    out = Buffer<S>::Constant(out_n, -std::numeric_limits<S>::infinity());
    argmax.assign(static_cast<std::size_t>(out_n), -1);
    visit([&](Index i, Index o) {
      if (argmax[o] < 0 || px[i] > out[o]) {
        out[o] = px[i];
        argmax[o] = i;
      }
    });
  } else {
    out = Buffer<S>::Zero(out_n);
    visit([&](Index i, Index o) { out[o] += px[i]; });
    if (op == ReduceOp::kMean) out /= static_cast<S>(count);
  }

  return Tensor<S>::make(out_shape, std::move(out), {x},
                         [=, argmax = std::move(argmax)](const Node<S>& self) {
                           Buffer<S>& gx = self.parents[0]->grad_slot();
                           if (op == ReduceOp::kMax) {
                             for (Index o = 0; o < out_n; ++o) gx[argmax[o]] += self.grad[o];
                             return;
                           }
                           const S f = op == ReduceOp::kMean ? S(1) / static_cast<S>(count) : S(1);
                           visit([&](Index i, Index o) { gx[i] += self.grad[o] * f; });
                         });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  std::vector<int> axes(static_cast<std::size_t>(x.rank()));
  for (int i = 0; i < x.rank(); ++i) axes[i] = i;
  return reduce(x, axes, ReduceOp::kSum);
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  std::vector<int> axes(static_cast<std::size_t>(x.rank()));
  for (int i = 0; i < x.rank(); ++i) axes[i] = i;
  return reduce(x, axes, ReduceOp::kMean);
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, const Shape& shape) {
  if (shape.numel() != x.numel()) {
    throw ShapeError("reshape: " + x.shape().str() + " -> " + shape.str());
  }
  return Tensor<S>::make(shape, x.data(), {x}, [](const Node<S>& self) {
    self.parents[0]->accumulate(self.grad);
  });
}

template <typename S>
Tensor<S> bicubic_upsample(const Tensor<S>& x, int factor) {
  if (factor < 1) throw ParameterError("bicubic_upsample: factor must be >= 1");
  require_spatial(x.shape(), "bicubic_upsample");
  const Index planes = x.shape().planes();
  const Index h = x.dim(-2), w = x.dim(-1);
  const Index oh = h * factor, ow = w * factor;
  auto tx = std::make_shared<std::vector<Taps<S>>>(cubic_taps<S>(w, factor));
  auto ty = std::make_shared<std::vector<Taps<S>>>(cubic_taps<S>(h, factor));

  Buffer<S> tmp(planes * h * ow);
  Buffer<S> out(planes * oh * ow);
  const S* px = x.raw();
  for (Index p = 0; p < planes; ++p) {
    for (Index y = 0; y < h; ++y) {
      const S* row = px + (p * h + y) * w;
      S* dst = tmp.data() + (p * h + y) * ow;
      for (Index o = 0; o < ow; ++o) {
        const Taps<S>& t = (*tx)[o];
        const S ref = row[t.index[1]];
        S acc = 0;
        for (int k = 0; k < 4; ++k) acc += t.weight[k] * (row[t.index[k]] - ref);
        dst[o] = ref + acc;
      }
    }
    const S* src = tmp.data() + p * h * ow;
    S* dst = out.data() + p * oh * ow;
    for (Index o = 0; o < oh; ++o) {
      const Taps<S>& t = (*ty)[o];
      for (Index c = 0; c < ow; ++c) {
        const S ref = src[t.index[1] * ow + c];
        S acc = 0;
        for (int k = 0; k < 4; ++k) acc += t.weight[k] * (src[t.index[k] * ow + c] - ref);
        dst[o * ow + c] = ref + acc;
      }
    }
  }

  return Tensor<S>::make(x.shape().with(-2, oh).with(-1, ow), std::move(out), {x},
                         [=](const Node<S>& self) {
                           Buffer<S>& gx = self.parents[0]->grad_slot();
                           Buffer<S> gtmp = Buffer<S>::Zero(planes * h * ow);
                           for (Index p = 0; p < planes; ++p) {
                             const S* g = self.grad.data() + p * oh * ow;
                             S* gt = gtmp.data() + p * h * ow;
                             for (Index o = 0; o < oh; ++o) {
                               const Taps<S>& t = (*ty)[o];
                               for (Index c = 0; c < ow; ++c)
                                 for (int k = 0; k < 4; ++k)
                                   gt[t.index[k] * ow + c] += t.weight[k] * g[o * ow + c];
                             }
                             for (Index y = 0; y < h; ++y) {
                               const S* grow = gt + y * ow;
                               S* xrow = gx.data() + (p * h + y) * w;
                               for (Index o = 0; o < ow; ++o) {
                                 const Taps<S>& t = (*tx)[o];
                                 for (int k = 0; k < 4; ++k) xrow[t.index[k]] += t.weight[k] * grow[o];
                               }
                             }
                           }
                         });
}

template <typename S>
Tensor<S> box_filter(const Tensor<S>& x, int k) {
  if (k < 1 || k % 2 == 0) {
    throw ParameterError("box_filter: window must be odd and >= 1, got " + std::to_string(k));
  }
  require_spatial(x.shape(), "box_filter");
  const Index planes = x.shape().planes();
  const Index h = x.dim(-2), w = x.dim(-1);
  Buffer<S> tmp(x.numel());
  Buffer<S> out(x.numel());
  box_pass(x.raw(), tmp.data(), planes, h, w, k, true);
  box_pass(tmp.data(), out.data(), planes, h, w, k, false);
  return Tensor<S>::make(x.shape(), std::move(out), {x}, [=](const Node<S>& self) {
    Buffer<S> gt = Buffer<S>::Zero(self.grad.size());
    box_pass_adjoint(self.grad.data(), gt.data(), planes, h, w, k, false);
    box_pass_adjoint(gt.data(), self.parents[0]->grad_slot().data(), planes, h, w, k, true);
  });
}

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() < 3 || a.rank() != b.rank()) {
    throw ShapeError("concat_channels: incompatible ranks " + a.shape().str() + ", " +
                     b.shape().str());
  }
  for (int i = 0; i < a.rank(); ++i) {
    if (i != a.rank() - 3 && a.dim(i) != b.dim(i)) {
      throw ShapeError("concat_channels: batch/spatial mismatch " + a.shape().str() + " vs " +
                       b.shape().str());
    }
  }
  const Index ca = a.dim(-3), cb = b.dim(-3);
  const Index inner = a.dim(-1) * a.dim(-2);
  Index outer = 1;
  for (int i = 0; i + 3 < a.rank(); ++i) outer *= a.dim(i);
  const Index blk_a = ca * inner, blk_b = cb * inner;
  Buffer<S> out(outer * (blk_a + blk_b));
  for (Index o = 0; o < outer; ++o) {
    out.segment(o * (blk_a + blk_b), blk_a) = a.data().segment(o * blk_a, blk_a);
    out.segment(o * (blk_a + blk_b) + blk_a, blk_b) = b.data().segment(o * blk_b, blk_b);
  }
  return Tensor<S>::make(a.shape().with(-3, ca + cb), std::move(out), {a, b},
                         [=](const Node<S>& self) {
                           Node<S>& na = *self.parents[0];
                           Node<S>& nb = *self.parents[1];
                           for (Index o = 0; o < outer; ++o) {
                             if (na.requires_grad)
                               na.grad_slot().segment(o * blk_a, blk_a) +=
                                   self.grad.segment(o * (blk_a + blk_b), blk_a);
                             if (nb.requires_grad)
                               nb.grad_slot().segment(o * blk_b, blk_b) +=
                                   self.grad.segment(o * (blk_a + blk_b) + blk_a, blk_b);
                           }
                         });
}

template <typename S>
Tensor<S> avg_pool2(const Tensor<S>& x) {
  require_spatial(x.shape(), "avg_pool2");
  const Index h = x.dim(-2), w = x.dim(-1);
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("avg_pool2: odd spatial size " + x.shape().str());
  const Index planes = x.shape().planes();
  const Index oh = h / 2, ow = w / 2;
  Buffer<S> out(planes * oh * ow);
  const S* px = x.raw();
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < oh; ++y)
      for (Index c = 0; c < ow; ++c) {
        const S* r0 = px + (p * h + 2 * y) * w + 2 * c;
        const S* r1 = r0 + w;
        out[(p * oh + y) * ow + c] = S(0.25) * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  return Tensor<S>::make(x.shape().with(-2, oh).with(-1, ow), std::move(out), {x},
                         [=](const Node<S>& self) {
                           Buffer<S>& gx = self.parents[0]->grad_slot();
                           for (Index p = 0; p < planes; ++p)
                             for (Index y = 0; y < oh; ++y)
                               for (Index c = 0; c < ow; ++c) {
                                 const S g = S(0.25) * self.grad[(p * oh + y) * ow + c];
                                 const Index i = (p * h + 2 * y) * w + 2 * c;
                                 gx[i] += g;
                                 gx[i + 1] += g;
                                 gx[i + w] += g;
                                 gx[i + w + 1] += g;
                               }
                         });
}

template <typename S>
Tensor<S> upsample_nearest(const Tensor<S>& x, int factor) {
  if (factor < 1) throw ParameterError("upsample_nearest: factor must be >= 1");
  require_spatial(x.shape(), "upsample_nearest");
  const Index planes = x.shape().planes();
  const Index h = x.dim(-2), w = x.dim(-1);
  const Index oh = h * factor, ow = w * factor;
  Buffer<S> out(planes * oh * ow);
  const S* px = x.raw();
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < oh; ++y)
      for (Index c = 0; c < ow; ++c)
        out[(p * oh + y) * ow + c] = px[(p * h + y / factor) * w + c / factor];
  return Tensor<S>::make(x.shape().with(-2, oh).with(-1, ow), std::move(out), {x},
                         [=](const Node<S>& self) {
                           Buffer<S>& gx = self.parents[0]->grad_slot();
                           for (Index p = 0; p < planes; ++p)
                             for (Index y = 0; y < oh; ++y)
                               for (Index c = 0; c < ow; ++c)
                                 gx[(p * h + y / factor) * w + c / factor] +=
                                     self.grad[(p * oh + y) * ow + c];
                         });
}

template <typename S>
Tensor<S> flip(const Tensor<S>& x, bool horizontal) {
  require_spatial(x.shape(), "flip");
  const Index planes = x.shape().planes();
  const Index h = x.dim(-2), w = x.dim(-1);
  // The mirror is an involution, so the same index map serves the adjoint.
  const auto source = [=](Index i) {
    const Index p = i / (h * w), r = (i / w) % h, c = i % w;
    return horizontal ? (p * h + r) * w + (w - 1 - c) : (p * h + (h - 1 - r)) * w + c;
  };
  Buffer<S> out(x.numel());
  for (Index i = 0; i < planes * h * w; ++i) out[i] = x[source(i)];
  return Tensor<S>::make(x.shape(), std::move(out), {x}, [=](const Node<S>& self) {
    Buffer<S>& gx = self.parents[0]->grad_slot();
    for (Index i = 0; i < planes * h * w; ++i) gx[source(i)] += self.grad[i];
  });
}

#define MSDN_INSTANTIATE_OPS(S)                                                          \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);       \
  template Tensor<S> prelu(const Tensor<S>&, const Tensor<S>&);                          \
  template Tensor<S> relu(const Tensor<S>&);                                             \
  template Tensor<S> sigmoid(const Tensor<S>&);                                          \
  template Tensor<S> abs(const Tensor<S>&);                                              \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> neg(const Tensor<S>&);                                              \
  template Tensor<S> scale(const Tensor<S>&, S);                                         \
  template Tensor<S> reduce(const Tensor<S>&, std::vector<int>, ReduceOp, bool);         \
  template Tensor<S> sum(const Tensor<S>&);                                              \
  template Tensor<S> mean(const Tensor<S>&);                                             \
  template Tensor<S> reshape(const Tensor<S>&, const Shape&);                            \
  template Tensor<S> bicubic_upsample(const Tensor<S>&, int);                            \
  template Tensor<S> box_filter(const Tensor<S>&, int);                                  \
  template Tensor<S> concat_channels(const Tensor<S>&, const Tensor<S>&);                \
  template Tensor<S> avg_pool2(const Tensor<S>&);                                        \
  template Tensor<S> upsample_nearest(const Tensor<S>&, int);                            \
  template Tensor<S> flip(const Tensor<S>&, bool);

MSDN_INSTANTIATE_OPS(float)
MSDN_INSTANTIATE_OPS(double)

}  // namespace msdn
