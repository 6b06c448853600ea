#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msdn/msdn.hpp"

// End-to-end pan-sharpening network: MS features (head) are up-sampled, turned
// into spatial details by the memory network, injected by a U-shaped nested
// injection network and added to the bicubic-upsampled MS image.
namespace msdn {

struct ModelConfig {
  MsdnConfig msdn;
  Index bands = 4;
  Index head_blocks = 4;
  int nin_depth = 3;

  Index channels() const { return msdn.channels; }
  int scale() const { return msdn.scale; }
  void validate() const;
};

template <typename S>
struct ResidualBlock {
  ConvLayer<S> first;
  ConvLayer<S> second;
};

template <typename S>
struct HeadWeights {
  ConvLayer<S> stem;  // 3x3, bands -> C
  std::vector<ResidualBlock<S>> blocks;
};

// Two PReLU branches over y and -y, each a 3x3 conv to C/2, fused by a 3x3
// conv over their concatenation and added back to y.
template <typename S>
struct InjectionBlockWeights {
  Tensor<S> positive_slope;
  Tensor<S> negative_slope;
  ConvLayer<S> positive;  // W_p
  ConvLayer<S> negative;  // W_n
  ConvLayer<S> fuse;
};

template <typename S>
struct NinWeights {
  ConvLayer<S> embed;  // W_e, 3x3, 1 -> C
  std::vector<InjectionBlockWeights<S>> encoder;  // depth entries
  std::vector<InjectionBlockWeights<S>> decoder;  // depth - 1 entries, finest first
  ConvLayer<S> project;  // W_m, 1x1, C -> bands

  int depth() const { return static_cast<int>(encoder.size()); }
};

template <typename S>
class PansharpenModel {
 public:
  PansharpenModel(const ModelConfig& config, std::uint64_t seed);

  PansharpenModel(PansharpenModel&&) noexcept = default;
  PansharpenModel& operator=(PansharpenModel&&) noexcept = default;
  PansharpenModel(const PansharpenModel&) = delete;
  PansharpenModel& operator=(const PansharpenModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterStore<S>& parameters() { return store_; }
  const ParameterStore<S>& parameters() const { return store_; }

  const HeadWeights<S>& head() const { return head_; }
  const MsdnWeights<S>& memory_network() const { return msdn_; }
  const NinWeights<S>& injection() const { return nin_; }

 private:
  ModelConfig config_;
  ParameterStore<S> store_;
  HeadWeights<S> head_;
  MsdnWeights<S> msdn_;
  NinWeights<S> nin_;
};

template <typename S>
struct PansharpenOutput {
  Tensor<S> hrms;             // (n, bands, s*h, s*w)
  Tensor<S> injection;        // Y
  Tensor<S> spatial_details;  // P_s
  Tensor<S> coefficients;     // M_C
};

template <typename S>
Tensor<S> head(const Tensor<S>& ms, const HeadWeights<S>& w);

template <typename S>
Tensor<S> injection_block(const Tensor<S>& y, const InjectionBlockWeights<S>& w);

// Y = W_m * (y_d + f_IB(y_d)) with y_d = W_e * P_s.
template <typename S>
Tensor<S> nin_forward(const Tensor<S>& spatial_details, const NinWeights<S>& w);

// Full forward pass. Only the MS image is consumed.
template <typename S>
PansharpenOutput<S> pansharpen_detailed(const Tensor<S>& ms, const PansharpenModel<S>& model);

template <typename S>
Tensor<S> pansharpen(const Tensor<S>& ms, const PansharpenModel<S>& model) {
  return pansharpen_detailed(ms, model).hrms;
}

}  // namespace msdn
