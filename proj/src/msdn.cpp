#include "msdn/msdn.hpp"

#include <string>

namespace msdn {

void MsdnConfig::validate() const {
  if (memory_slots < 1) throw ConfigError("memory slots must be >= 1");
  if (scale < 1) throw ConfigError("scale factor must be >= 1");
  if (channels < 1) throw ConfigError("feature channels must be >= 1");
  if (spatial_kernel < 1 || spatial_kernel % 2 == 0)
    throw ConfigError("spatial attention kernel must be odd");
  if (reduction < 1) throw ConfigError("channel reduction ratio must be >= 1");
}

template <typename S>
MsdnWeights<S> MsdnWeights<S>::create(ParameterStore<S>& store, const MsdnConfig& config,
                                      Rng& rng, const std::string& prefix) {
  config.validate();
  const Index c = config.channels, n = config.memory_slots, r = config.squeezed_channels();
  const Index tile = Index(config.scale) * config.scale;
  MsdnWeights w;
  w.query_conv = ConvLayer<S>::create(store, prefix + ".query.conv", c, n, 3, rng);
  w.query_proj = ConvLayer<S>::create(store, prefix + ".query.proj", n, n, 1, rng);
  w.memory.items = store.create(prefix + ".memory", Shape{n, tile},
                                kaiming_normal<S>(n * tile, tile, rng));
  w.decoder_conv = ConvLayer<S>::create(store, prefix + ".decoder.conv", n, c, 3, rng);
  w.spatial_gate =
      ConvLayer<S>::create(store, prefix + ".decoder.spatial_gate", 2, 1, config.spatial_kernel, rng);
  w.decoder_proj = ConvLayer<S>::create(store, prefix + ".decoder.proj", c, c, 1, rng);
  w.coeff_in = ConvLayer<S>::create(store, prefix + ".coeff.in", c, c, 1, rng);
  w.channel_squeeze = ConvLayer<S>::create(store, prefix + ".coeff.squeeze", c, r, 1, rng);
  w.channel_excite = ConvLayer<S>::create(store, prefix + ".coeff.excite", r, c, 1, rng);
  w.coeff_out = ConvLayer<S>::create(store, prefix + ".coeff.out", c, c, 1, rng);
  return w;
}

template <typename S>
Tensor<S> expand_memory(const MemoryBank<S>& bank, Index height, Index width) {
  const Index slots = bank.slots();
  const Index s = bank.scale();
  if (s * s != bank.items.dim(1)) throw ShapeError("memory items are not square tiles");
  if (height % s != 0 || width % s != 0) {
    throw ShapeError("expand_memory: " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by tile size " + std::to_string(s));
  }
  const Index plane = height * width;
  Buffer<S> out(slots * plane);
  const S* e = bank.items.raw();
  for (Index n = 0; n < slots; ++n)
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x)
        out[n * plane + y * width + x] = e[n * s * s + (y % s) * s + (x % s)];
  return Tensor<S>::make(Shape{slots, height, width}, std::move(out), {bank.items},
                         [=](const detail::Node<S>& self) {
                           Buffer<S>& g = self.parents[0]->grad_slot();
                           for (Index n = 0; n < slots; ++n)
                             for (Index y = 0; y < height; ++y)
                               for (Index x = 0; x < width; ++x)
                                 g[n * s * s + (y % s) * s + (x % s)] +=
                                     self.grad[n * plane + y * width + x];
                         });
}

template <typename S>
Tensor<S> encode_query(const Tensor<S>& features, const MsdnWeights<S>& w) {
  return w.query_proj(relu(w.query_conv(features)));
}

template <typename S>
Tensor<S> spatial_attention(const Tensor<S>& features, const MsdnWeights<S>& w) {
  const Tensor<S> avg = reduce(features, {1}, ReduceOp::kMean, true);
  const Tensor<S> peak = reduce(features, {1}, ReduceOp::kMax, true);
  return sigmoid(w.spatial_gate(concat_channels(avg, peak)));
}

template <typename S>
Tensor<S> decode_memory(const Tensor<S>& expanded, const Tensor<S>& query,
                        const MsdnWeights<S>& w) {
  if (expanded.rank() != 3 || query.rank() != 4 || expanded.dim(0) != query.dim(1) ||
      expanded.dim(1) != query.dim(2) || expanded.dim(2) != query.dim(3)) {
    throw ShapeError("decode_memory: memory " + expanded.shape().str() + " vs query " +
                     query.shape().str());
  }
  const Tensor<S> decoder_input = mul(query, expanded);
  const Tensor<S> f = relu(w.decoder_conv(decoder_input));
  return w.decoder_proj(mul(f, spatial_attention(f, w)));
}

template <typename S>
Tensor<S> channel_attention(const Tensor<S>& features, const MsdnWeights<S>& w) {
  const Tensor<S> pooled = reduce(features, {2, 3}, ReduceOp::kMean, true);
  return sigmoid(w.channel_excite(relu(w.channel_squeeze(pooled))));
}

template <typename S>
Tensor<S> weighted_coefficients(const Tensor<S>& features, const MsdnWeights<S>& w) {
  const Tensor<S> a = w.coeff_in(features);
  return w.coeff_out(mul(a, channel_attention(a, w)));
}

template <typename S>
Tensor<S> compose_spatial_details(const Tensor<S>& memory_features,
                                  const Tensor<S>& coefficients) {
  if (!(memory_features.shape() == coefficients.shape()) || memory_features.rank() != 4) {
    throw ShapeError("compose_spatial_details: " + memory_features.shape().str() + " vs " +
                     coefficients.shape().str());
  }
  return reduce(mul(memory_features, coefficients), {1}, ReduceOp::kSum, true);
}

template <typename S>
MsdnOutput<S> msdn_forward(const Tensor<S>& features, const MsdnWeights<S>& w) {
  if (features.rank() != 4) throw ShapeError("msdn_forward: expected (n, C, H, W)");
  const Tensor<S> expanded = expand_memory(w.memory, features.dim(2), features.dim(3));
  const Tensor<S> query = encode_query(features, w);
  const Tensor<S> memory_features = decode_memory(expanded, query, w);
  Tensor<S> coefficients = weighted_coefficients(features, w);
  return {compose_spatial_details(memory_features, coefficients), std::move(coefficients)};
}

#define MSDN_INSTANTIATE(S)                                                                 \
  template struct MsdnWeights<S>;                                                           \
  template Tensor<S> expand_memory(const MemoryBank<S>&, Index, Index);                     \
  template Tensor<S> encode_query(const Tensor<S>&, const MsdnWeights<S>&);                 \
  template Tensor<S> spatial_attention(const Tensor<S>&, const MsdnWeights<S>&);            \
  template Tensor<S> decode_memory(const Tensor<S>&, const Tensor<S>&, const MsdnWeights<S>&); \
  template Tensor<S> channel_attention(const Tensor<S>&, const MsdnWeights<S>&);            \
  template Tensor<S> weighted_coefficients(const Tensor<S>&, const MsdnWeights<S>&);        \
  template Tensor<S> compose_spatial_details(const Tensor<S>&, const Tensor<S>&);           \
  template MsdnOutput<S> msdn_forward(const Tensor<S>&, const MsdnWeights<S>&);

MSDN_INSTANTIATE(float)
MSDN_INSTANTIATE(double)

}  // namespace msdn
