#pragma once

#include <vector>

#include "msdn/tensor.hpp"

// Hand-crafted detail-injection baselines, H_b = MS~_b + g_b * P_s, with
// component-substitution (P_s = P - I) and multi-resolution (P_s = P - P_l)
// detail extractors.
namespace msdn {

enum class InjectionMode { kComponentSubstitution, kMraAdditive, kSfimMultiplicative };

struct InjectionConfig {
  std::vector<double> gain{1.0};   // one value, or one per band
  std::vector<double> band_weights;  // omega; empty means 1/B each
  int hp_window = 5;
  InjectionMode mode = InjectionMode::kMraAdditive;

  void validate(Index bands) const;
};

// PAN minus its k x k box-filtered (low-pass) version. pan is (1, H, W).
template <typename S>
Tensor<S> hp_details(const Tensor<S>& pan, int window);

// I = sum_b omega_b * ms_up_b, shape (1, H, W).
template <typename S>
Tensor<S> weighted_intensity(const Tensor<S>& ms_up, const std::vector<double>& band_weights);

template <typename S>
Tensor<S> cs_inject(const Tensor<S>& ms_up, const Tensor<S>& pan, const InjectionConfig& config);

// Additive: ms_up + g * (P - P_l). SFIM: ms_up * P / max(P_l, 1e-6).
template <typename S>
Tensor<S> mra_inject(const Tensor<S>& ms_up, const Tensor<S>& pan, const InjectionConfig& config);

template <typename S>
Tensor<S> inject(const Tensor<S>& ms_up, const Tensor<S>& pan, const InjectionConfig& config);

}  // namespace msdn
