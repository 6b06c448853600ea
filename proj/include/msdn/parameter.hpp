#pragma once

#include <cmath>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "msdn/ops.hpp"
#include "msdn/tensor.hpp"

namespace msdn {

using Rng = std::mt19937_64;

// A named trainable leaf plus its Adam moment slots.
template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  Buffer<S> first_moment;
  Buffer<S> second_moment;
};

// Owns every trainable tensor of a model, in creation order.
template <typename S>
class ParameterStore {
 public:
  Tensor<S> create(std::string name, const Shape& shape, Buffer<S> init) {
    if (find(name) != nullptr) throw ConfigError("duplicate parameter name '" + name + "'");
    Tensor<S> t = Tensor<S>::leaf(shape, std::move(init));
    params_.push_back({std::move(name), t, Buffer<S>::Zero(shape.numel()),
                       Buffer<S>::Zero(shape.numel())});
    return t;
  }

  Parameter<S>* find(std::string_view name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  const Parameter<S>* find(std::string_view name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::vector<Parameter<S>>& all() { return params_; }
  const std::vector<Parameter<S>>& all() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
  }

  Index scalar_count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  // Sets every parameter whose name starts with prefix to zero.
  void zero_values(std::string_view prefix = {}) {
    for (auto& p : params_)
      if (p.name.starts_with(prefix)) p.value.mutable_data().setZero();
  }

 private:
  std::vector<Parameter<S>> params_;
};

// Kaiming (fan-in, normal) initialisation: N(0, 2 / fan_in).
template <typename S>
Buffer<S> kaiming_normal(Index count, Index fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Buffer<S> b(count);
  for (Index i = 0; i < count; ++i) b[i] = static_cast<S>(dist(rng));
  return b;
}

// Same-padded, stride-1 k x k convolution with bias.
template <typename S>
struct ConvLayer {
  Tensor<S> weight;  // (out, in, k, k)
  Tensor<S> bias;    // (out)

  Index in_channels() const { return weight.dim(1); }
  Index out_channels() const { return weight.dim(0); }
  int kernel() const { return static_cast<int>(weight.dim(2)); }

  Tensor<S> operator()(const Tensor<S>& x) const { return conv2d(x, weight, bias); }

  static ConvLayer create(ParameterStore<S>& store, const std::string& name, Index in,
                          Index out, int k, Rng& rng) {
    ConvLayer layer;
    layer.weight = store.create(name + ".weight", Shape{out, in, k, k},
                                kaiming_normal<S>(out * in * k * k, in * k * k, rng));
    layer.bias = store.create(name + ".bias", Shape{out}, Buffer<S>::Zero(out));
    return layer;
  }
};

}  // namespace msdn
