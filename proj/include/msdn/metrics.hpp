#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "msdn/tensor.hpp"

// Reduced-resolution (SAM, ERGAS, SCC, Q4, RMSE) and full-resolution (QNR,
// D_lambda, D_s) pan-sharpening quality indices. Images are (K, H, W) band
// stacks in 64-bit; a leading batch axis of extent 1 is accepted.
namespace msdn::metrics {

using Image = Tensor<double>;

struct MetricsConfig {
  double resolution_ratio = 0.25;  // h / l, PAN over MS pixel size ratio
  double p = 1.0;                  // spectral distortion exponent
  double q = 1.0;                  // spatial distortion exponent
  double alpha = 1.0;
  double beta = 1.0;
  std::vector<double> band_weights;  // for X', Y'; empty means equal weights
  int q_window = 0;                  // 0 = global statistics, else odd window size
  bool ergas_reference_mean = false;  // divide by E[Y_k] instead of E[X_k]

  void validate() const;
};

struct MetricsReport {
  std::map<std::string, double> values;
  MetricsConfig config;
};

// Correctly rounded sum of doubles (Shewchuk partials, as in Python's fsum).
double exact_sum(std::span<const double> values);

template <typename Derived>
double exact_mean(const Eigen::ArrayBase<Derived>& values) {
  const Eigen::ArrayXd v = values.template cast<double>().reshaped();
  return exact_sum({v.data(), static_cast<std::size_t>(v.size())}) / static_cast<double>(v.size());
}

double rmse(const Image& x, const Image& y);

// Mean per-pixel spectral angle in radians. Pixels where either spectral
// vector is zero contribute 0.
//
// The tabulated form arccos(sum_k <X_k,Y_k> / (|X_k| |Y_k|)) can leave the
// domain of arccos; the standard per-pixel angle is computed instead.
double sam(const Image& x, const Image& y);

// 100 (h/l) sqrt(mean_k (RMSE_k / E[X_k])^2), X the prediction.
double ergas(const Image& x, const Image& y, const MetricsConfig& config = {});

// Pearson correlation of the 3x3 Laplacian responses (valid region, all bands
// pooled). Means are those of the filtered images.
double scc(const Image& x, const Image& y);

// Universal image quality index of two planes (H, W): correlation x luminance x
// contrast. Contrast uses 2 s_x s_y / (s_x^2 + s_y^2). Zero-variance inputs
// score 1 if identical and 0 otherwise.
double q_index(const Eigen::Ref<const Eigen::ArrayXXd>& x, const Eigen::Ref<const Eigen::ArrayXXd>& y,
               const MetricsConfig& config = {});

// Q index of the band-weighted composites X' and Y' of two 4-band images.
double q4(const Image& x, const Image& y, const MetricsConfig& config = {});

// Spectral distortion between inter-band Q values at MS and fused scales.
double d_lambda(const Image& ms, const Image& fused, const MetricsConfig& config = {});

// Spatial distortion; the low-resolution PAN is the block-mean downsample of pan.
double d_s(const Image& ms, const Image& fused, const Image& pan, const MetricsConfig& config = {});

double qnr(double d_lambda_value, double d_s_value, const MetricsConfig& config = {});

// {sam, ergas, scc, q4}
MetricsReport reduced_resolution(const Image& prediction, const Image& reference,
                                 const MetricsConfig& config = {});

// {qnr, d_lambda, d_s}
MetricsReport full_resolution(const Image& fused, const Image& ms, const Image& pan,
                              const MetricsConfig& config = {});

}  // namespace msdn::metrics
