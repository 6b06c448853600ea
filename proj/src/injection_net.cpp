#include "msdn/injection_net.hpp"

#include <string>

namespace msdn {

void ModelConfig::validate() const {
  msdn.validate();
  if (bands < 1) throw ConfigError("band count must be >= 1");
  if (head_blocks < 0) throw ConfigError("head block count must be >= 0");
  if (nin_depth < 1) throw ConfigError("NIN depth must be >= 1");
  if (msdn.channels % 2 != 0) {
    throw ConfigError("feature channels must be even for the injection blocks, got " +
                      std::to_string(msdn.channels));
  }
}

namespace {

template <typename S>
InjectionBlockWeights<S> make_injection_block(ParameterStore<S>& store, const std::string& name,
                                              Index channels, Rng& rng) {
  InjectionBlockWeights<S> b;
  b.positive_slope = store.create(name + ".pos_slope", Shape{1}, Buffer<S>::Constant(1, S(0.25)));
  b.negative_slope = store.create(name + ".neg_slope", Shape{1}, Buffer<S>::Constant(1, S(0.25)));
  b.positive = ConvLayer<S>::create(store, name + ".pos", channels, channels / 2, 3, rng);
  b.negative = ConvLayer<S>::create(store, name + ".neg", channels, channels / 2, 3, rng);
  b.fuse = ConvLayer<S>::create(store, name + ".fuse", channels, channels, 3, rng);
  return b;
}

}  // namespace

template <typename S>
PansharpenModel<S>::PansharpenModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config) {
  config_.validate();
  Rng rng(seed);
  const Index c = config_.channels();

  head_.stem = ConvLayer<S>::create(store_, "head.stem", config_.bands, c, 3, rng);
  for (Index i = 0; i < config_.head_blocks; ++i) {
    const std::string name = "head.block" + std::to_string(i);
    head_.blocks.push_back({ConvLayer<S>::create(store_, name + ".conv1", c, c, 3, rng),
                            ConvLayer<S>::create(store_, name + ".conv2", c, c, 3, rng)});
  }

  msdn_ = MsdnWeights<S>::create(store_, config_.msdn, rng);

  nin_.embed = ConvLayer<S>::create(store_, "nin.embed", 1, c, 3, rng);
  for (int l = 0; l < config_.nin_depth; ++l)
    nin_.encoder.push_back(make_injection_block(store_, "nin.enc" + std::to_string(l), c, rng));
  for (int l = 0; l + 1 < config_.nin_depth; ++l)
    nin_.decoder.push_back(make_injection_block(store_, "nin.dec" + std::to_string(l), c, rng));
  nin_.project = ConvLayer<S>::create(store_, "nin.project", c, config_.bands, 1, rng);
}

template <typename S>
Tensor<S> head(const Tensor<S>& ms, const HeadWeights<S>& w) {
  if (ms.rank() != 4 || ms.dim(1) != w.stem.in_channels()) {
    throw ShapeError("head: expected (n, " + std::to_string(w.stem.in_channels()) +
                     ", h, w) MS input, got " + ms.shape().str());
  }
  Tensor<S> x = relu(w.stem(ms));
  for (const ResidualBlock<S>& b : w.blocks) x = add(x, b.second(relu(b.first(x))));
  return x;
}

template <typename S>
Tensor<S> injection_block(const Tensor<S>& y, const InjectionBlockWeights<S>& w) {
  if (y.rank() != 4 || y.dim(1) % 2 != 0) {
    throw ConfigError("injection_block: channel count must be even, got " + y.shape().str());
  }
  const Tensor<S> xp = w.positive(prelu(y, w.positive_slope));
  const Tensor<S> xn = w.negative(prelu(neg(y), w.negative_slope));
  return add(w.fuse(concat_channels(xp, xn)), y);
}

template <typename S>
Tensor<S> nin_forward(const Tensor<S>& spatial_details, const NinWeights<S>& w) {
  if (spatial_details.rank() != 4 || spatial_details.dim(1) != 1) {
    throw ShapeError("nin_forward: expected (n, 1, H, W) spatial details, got " +
                     spatial_details.shape().str());
  }
  const Index step = Index(1) << (w.depth() - 1);
  if (spatial_details.dim(2) % step != 0 || spatial_details.dim(3) % step != 0) {
    throw ShapeError("nin_forward: spatial size " + spatial_details.shape().str() +
                     " not divisible by " + std::to_string(step));
  }
  const Tensor<S> yd = w.embed(spatial_details);

  std::vector<Tensor<S>> skips;
  Tensor<S> x = yd;
  for (int l = 0; l < w.depth(); ++l) {
    if (l > 0) x = avg_pool2(x);
    x = injection_block(x, w.encoder[static_cast<std::size_t>(l)]);
    skips.push_back(x);
  }
  for (int l = w.depth() - 2; l >= 0; --l) {
    x = add(upsample_nearest(x, 2), skips[static_cast<std::size_t>(l)]);
    x = injection_block(x, w.decoder[static_cast<std::size_t>(l)]);
  }
  return w.project(add(yd, x));
}

template <typename S>
PansharpenOutput<S> pansharpen_detailed(const Tensor<S>& ms, const PansharpenModel<S>& model) {
  const int s = model.config().scale();
  if (ms.rank() != 4 || ms.dim(2) < 1 || ms.dim(3) < 1) {
    throw ShapeError("pansharpen: expected (n, bands, h, w), got " + ms.shape().str());
  }
  const Tensor<S> features = bicubic_upsample(head(ms, model.head()), s);
  MsdnOutput<S> details = msdn_forward(features, model.memory_network());
  Tensor<S> y = nin_forward(details.spatial_details, model.injection());
  Tensor<S> h = add(bicubic_upsample(ms, s), y);
  return {std::move(h), std::move(y), std::move(details.spatial_details),
          std::move(details.coefficients)};
}

#define MSDN_INSTANTIATE(S)                                                                   \
  template class PansharpenModel<S>;                                                          \
  template Tensor<S> head(const Tensor<S>&, const HeadWeights<S>&);                           \
  template Tensor<S> injection_block(const Tensor<S>&, const InjectionBlockWeights<S>&);      \
  template Tensor<S> nin_forward(const Tensor<S>&, const NinWeights<S>&);                     \
  template PansharpenOutput<S> pansharpen_detailed(const Tensor<S>&, const PansharpenModel<S>&);

MSDN_INSTANTIATE(float)
MSDN_INSTANTIATE(double)

}  // namespace msdn
