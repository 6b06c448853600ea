#include "msdn/classic_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "msdn/ops.hpp"

namespace msdn {

namespace {

constexpr double kSfimFloor = 1e-6;

template <typename S>
void check_inputs(const Tensor<S>& ms_up, const Tensor<S>& pan, const char* op) {
  if (ms_up.rank() != 3 || pan.rank() != 3 || pan.dim(0) != 1) {
    throw ShapeError(std::string(op) + ": expected (B, H, W) MS and (1, H, W) PAN, got " +
                     ms_up.shape().str() + " and " + pan.shape().str());
  }
  if (ms_up.dim(1) != pan.dim(1) || ms_up.dim(2) != pan.dim(2)) {
    throw ShapeError(std::string(op) + ": spatial mismatch " + ms_up.shape().str() + " vs " +
                     pan.shape().str());
  }
}

template <typename S>
Tensor<S> gain_tensor(const InjectionConfig& config, Index bands) {
  Buffer<S> g(bands);
  for (Index b = 0; b < bands; ++b)
    g[b] = static_cast<S>(config.gain.size() == 1 ? config.gain[0] : config.gain[b]);
  return Tensor<S>::from_buffer(Shape{bands, 1, 1}, std::move(g));
}

// ms_up + g_b * details, with the single-plane details repeated for every band.
template <typename S>
Tensor<S> add_details(const Tensor<S>& ms_up, const Tensor<S>& details, const InjectionConfig& config) {
  const Tensor<S> per_band = add(Tensor<S>::zeros(ms_up.shape()), details);
  return add(ms_up, mul(per_band, gain_tensor<S>(config, ms_up.dim(0))));
}

}  // namespace

void InjectionConfig::validate(Index bands) const {
  if (gain.size() != 1 && static_cast<Index>(gain.size()) != bands) {
    throw ConfigError("injection gain must have 1 or " + std::to_string(bands) + " entries");
  }
  if (!band_weights.empty()) {
    if (static_cast<Index>(band_weights.size()) != bands)
      throw ConfigError("band weights must have one entry per band");
    if (std::any_of(band_weights.begin(), band_weights.end(), [](double w) { return w < 0; }))
      throw ConfigError("band weights must be non-negative");
    const double total = std::accumulate(band_weights.begin(), band_weights.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("band weights must sum to 1");
  }
  if (hp_window < 1 || hp_window % 2 == 0) throw ConfigError("hp window must be odd");
}

template <typename S>
Tensor<S> hp_details(const Tensor<S>& pan, int window) {
  if (window < 1 || window % 2 == 0) {
    throw ParameterError("hp_details: window must be odd, got " + std::to_string(window));
  }
  return sub(pan, box_filter(pan, window));
}

template <typename S>
Tensor<S> weighted_intensity(const Tensor<S>& ms_up, const std::vector<double>& band_weights) {
  if (ms_up.rank() != 3) throw ShapeError("weighted_intensity: expected (B, H, W)");
  const Index bands = ms_up.dim(0), plane = ms_up.dim(1) * ms_up.dim(2);
  Buffer<S> out = Buffer<S>::Zero(plane);
  for (Index b = 0; b < bands; ++b) {
    const S w = band_weights.empty() ? S(1) / static_cast<S>(bands)
                                     : static_cast<S>(band_weights[b]);
    out += w * ms_up.data().segment(b * plane, plane);
  }
  return Tensor<S>::from_buffer(Shape{1, ms_up.dim(1), ms_up.dim(2)}, std::move(out));
}

template <typename S>
Tensor<S> cs_inject(const Tensor<S>& ms_up, const Tensor<S>& pan, const InjectionConfig& config) {
  check_inputs(ms_up, pan, "cs_inject");
  config.validate(ms_up.dim(0));
  return add_details(ms_up, sub(pan, weighted_intensity(ms_up, config.band_weights)), config);
}

template <typename S>
Tensor<S> mra_inject(const Tensor<S>& ms_up, const Tensor<S>& pan, const InjectionConfig& config) {
  check_inputs(ms_up, pan, "mra_inject");
  config.validate(ms_up.dim(0));
  const Tensor<S> low = box_filter(pan, config.hp_window);
  if (config.mode == InjectionMode::kSfimMultiplicative) {
    const Buffer<S> ratio = pan.data() / low.data().max(static_cast<S>(kSfimFloor));
    return mul(ms_up, Tensor<S>::from_buffer(pan.shape(), ratio));
  }
  return add_details(ms_up, sub(pan, low), config);
}

template <typename S>
Tensor<S> inject(const Tensor<S>& ms_up, const Tensor<S>& pan, const InjectionConfig& config) {
  return config.mode == InjectionMode::kComponentSubstitution ? cs_inject(ms_up, pan, config)
                                                              : mra_inject(ms_up, pan, config);
}

#define MSDN_INSTANTIATE(S)                                                                  \
  template Tensor<S> hp_details(const Tensor<S>&, int);                                      \
  template Tensor<S> weighted_intensity(const Tensor<S>&, const std::vector<double>&);       \
  template Tensor<S> cs_inject(const Tensor<S>&, const Tensor<S>&, const InjectionConfig&);  \
  template Tensor<S> mra_inject(const Tensor<S>&, const Tensor<S>&, const InjectionConfig&); \
  template Tensor<S> inject(const Tensor<S>&, const Tensor<S>&, const InjectionConfig&);

MSDN_INSTANTIATE(float)
MSDN_INSTANTIATE(double)

}  // namespace msdn
