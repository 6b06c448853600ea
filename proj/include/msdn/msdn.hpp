#pragma once

#include <cmath>
#include <string>

#include "msdn/parameter.hpp"

// Memory-based spatial details network: synthesizes a single-channel map of
// spatial details from up-sampled MS features alone, as a learned dictionary
// (memory bank + decoder) weighted by predicted coefficients.
namespace msdn {

struct MsdnConfig {
  Index memory_slots = 64;  // N
  int scale = 4;            // s, side of one memory tile
  Index channels = 32;      // C
  int spatial_kernel = 7;
  Index reduction = 4;      // squeeze ratio of the channel gate

  void validate() const;
  Index squeezed_channels() const { return channels / reduction > 0 ? channels / reduction : 1; }
};

// N learnable spatial items of s*s values each. Changed only by the optimizer.
template <typename S>
struct MemoryBank {
  Tensor<S> items;  // (N, s*s)

  Index slots() const { return items.dim(0); }
  int scale() const { return static_cast<int>(std::lround(std::sqrt(double(items.dim(1))))); }
};

template <typename S>
struct MsdnWeights {
  ConvLayer<S> query_conv;     // 3x3, C -> N
  ConvLayer<S> query_proj;     // 1x1, N -> N
  ConvLayer<S> decoder_conv;   // 3x3, N -> C
  ConvLayer<S> decoder_proj;   // 1x1, C -> C
  ConvLayer<S> spatial_gate;   // k x k, 2 -> 1
  ConvLayer<S> coeff_in;       // 1x1, C -> C
  ConvLayer<S> coeff_out;      // 1x1, C -> C
  ConvLayer<S> channel_squeeze;  // 1x1, C -> C/r
  ConvLayer<S> channel_excite;   // 1x1, C/r -> C
  MemoryBank<S> memory;

  static MsdnWeights create(ParameterStore<S>& store, const MsdnConfig& config, Rng& rng,
                            const std::string& prefix = "msdn");
};

template <typename S>
struct MsdnOutput {
  Tensor<S> spatial_details;  // (n, 1, H, W)
  Tensor<S> coefficients;     // (n, C, H, W), kept for the sparsity penalty
};

// Reshapes each slot to an s x s tile (row-major) and tiles it over H x W.
// Result shape (N, H, W).
template <typename S>
Tensor<S> expand_memory(const MemoryBank<S>& bank, Index height, Index width);

// Query maps (n, N, H, W): 1x1 projection of ReLU(3x3 conv of X).
template <typename S>
Tensor<S> encode_query(const Tensor<S>& features, const MsdnWeights<S>& w);

// Channel mean and max maps -> k x k conv -> sigmoid. Result (n, 1, H, W).
template <typename S>
Tensor<S> spatial_attention(const Tensor<S>& features, const MsdnWeights<S>& w);

// M_D = W_d * (F . f_s(F)) with F = ReLU(W_c * (E (x) Q)).
template <typename S>
Tensor<S> decode_memory(const Tensor<S>& expanded, const Tensor<S>& query,
                        const MsdnWeights<S>& w);

// Squeeze-and-excitation gate, (n, C, 1, 1) in (0, 1).
template <typename S>
Tensor<S> channel_attention(const Tensor<S>& features, const MsdnWeights<S>& w);

// M_C = W_k * (f_c(A) . A) with A = W_a * X.
template <typename S>
Tensor<S> weighted_coefficients(const Tensor<S>& features, const MsdnWeights<S>& w);

// P_s = sum over channels of M_D . M_C, shape (n, 1, H, W).
template <typename S>
Tensor<S> compose_spatial_details(const Tensor<S>& memory_features,
                                  const Tensor<S>& coefficients);

template <typename S>
MsdnOutput<S> msdn_forward(const Tensor<S>& features, const MsdnWeights<S>& w);

}  // namespace msdn
