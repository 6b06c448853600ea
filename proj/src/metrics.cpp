#include "msdn/metrics.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "msdn/data.hpp"

namespace msdn::metrics {

namespace {

using Eigen::ArrayXd;
using Eigen::ArrayXXd;

// Views an image as (K, H, W), dropping a leading batch axis of extent 1.
struct Bands {
  Index count, height, width;
  const double* data;

  Eigen::Map<const RowMajorArray<double>> band(Index k) const {
    return {data + k * height * width, height, width};
  }
};

Bands bands_of(const Image& img, const char* op) {
  const Shape& s = img.shape();
  if (s.rank() == 3) return {s[0], s[1], s[2], img.raw()};
  if (s.rank() == 4 && s[0] == 1) return {s[1], s[2], s[3], img.raw()};
  if (s.rank() == 2) return {1, s[0], s[1], img.raw()};
  throw ShapeError(std::string(op) + ": expected a (K, H, W) image, got " + s.str());
}

void require_same(const Image& x, const Image& y, const char* op) {
  const Bands a = bands_of(x, op), b = bands_of(y, op);
  if (a.count != b.count || a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(op) + ": shape mismatch " + x.shape().str() + " vs " +
                     y.shape().str());
  }
}

// Integer ratio between fused and MS grids, identical in both axes.
int scale_between(const Bands& low, const Bands& high, const char* op) {
  if (low.height == 0 || low.width == 0 || high.height % low.height != 0 ||
      high.width % low.width != 0 || high.height / low.height != high.width / low.width) {
    throw ShapeError(std::string(op) + ": fused image is not an integer multiple of the MS grid");
  }
  return static_cast<int>(high.height / low.height);
}

struct Moments {
  double mean_x, mean_y, var_x, var_y, cov;
};

Moments moments(const ArrayXXd& x, const ArrayXXd& y) {
  Moments m{};
  m.mean_x = exact_mean(x);
  m.mean_y = exact_mean(y);
  const ArrayXXd dx = x - m.mean_x;
  const ArrayXXd dy = y - m.mean_y;
  m.var_x = exact_mean(dx.square());
  m.var_y = exact_mean(dy.square());
  m.cov = exact_mean(dx * dy);
  return m;
}

double q_global(const ArrayXXd& x, const ArrayXXd& y) {
  const Moments m = moments(x, y);
  const double var_product = m.var_x * m.var_y;
  if (var_product == 0.0) return (x == y).all() ? 1.0 : 0.0;
  const double sigma_product = std::sqrt(var_product);
  const double correlation = m.cov / sigma_product;
  const double mean_energy = m.mean_x * m.mean_x + m.mean_y * m.mean_y;
  const double luminance = mean_energy == 0.0 ? 1.0 : 2.0 * m.mean_x * m.mean_y / mean_energy;
  const double contrast = 2.0 * sigma_product / (m.var_x + m.var_y);
  return correlation * luminance * contrast;
}

ArrayXXd composite(const Bands& b, const std::vector<double>& weights) {
  ArrayXXd out = ArrayXXd::Zero(b.height, b.width);
  for (Index k = 0; k < b.count; ++k) {
    const double w = weights.empty() ? 1.0 / static_cast<double>(b.count) : weights[k];
    out += w * b.band(k);
  }
  return out;
}

ArrayXd laplacian_valid(const Bands& b) {
  if (b.height < 3 || b.width < 3) throw ShapeError("scc: image must be at least 3x3");
  const Index h = b.height - 2, w = b.width - 2;
  ArrayXd out(b.count * h * w);
  Index i = 0;
  for (Index k = 0; k < b.count; ++k) {
    const auto img = b.band(k);
    for (Index r = 1; r <= h; ++r)
      for (Index c = 1; c <= w; ++c)
        out[i++] = img(r - 1, c) + img(r + 1, c) + img(r, c - 1) + img(r, c + 1) -
                   4.0 * img(r, c);
  }
  return out;
}

}  // namespace

void MetricsConfig::validate() const {
  if (!(p >= 1.0) || !(q >= 1.0) || !(alpha >= 1.0) || !(beta >= 1.0)) {
    throw ConfigError("metric exponents must be >= 1");
  }
  if (!(resolution_ratio > 0.0)) throw ConfigError("resolution ratio must be positive");
  if (!band_weights.empty()) {
    const double total = std::accumulate(band_weights.begin(), band_weights.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("band weights must sum to 1");
  }
  if (q_window < 0 || (q_window > 0 && q_window % 2 == 0)) {
    throw ConfigError("q window must be 0 (global) or odd");
  }
}

double exact_sum(std::span<const double> values) {
  std::vector<double> partials;
  for (double x : values) {
    std::size_t i = 0;
    for (double y : partials) {
      if (std::abs(x) < std::abs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    partials.push_back(x);
  }
  // Round the exact multi-part total once, half-way cases included.
  std::size_t n = partials.size();
  if (n == 0) return 0.0;
  double hi = partials[--n];
  double lo = 0.0;
  while (n > 0) {
    const double x = hi;
    const double y = partials[--n];
    hi = x + y;
    lo = y - (hi - x);
    if (lo != 0.0) break;
  }
  if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
    const double y = lo * 2.0;
    const double x = hi + y;
    if (y == x - hi) hi = x;
  }
  return hi;
}

double rmse(const Image& x, const Image& y) {
  if (!(x.shape() == y.shape())) {
    throw ShapeError("rmse: shape mismatch " + x.shape().str() + " vs " + y.shape().str());
  }
  return std::sqrt(exact_mean((x.data() - y.data()).square()));
}

double sam(const Image& x, const Image& y) {
  require_same(x, y, "sam");
  const Bands a = bands_of(x, "sam"), b = bands_of(y, "sam");
  if (a.count < 2) throw ShapeError("sam: needs at least 2 bands");
  const Index plane = a.height * a.width;
  ArrayXd angles(plane);
  ArrayXd u(a.count), v(a.count);
  for (Index i = 0; i < plane; ++i) {
    for (Index k = 0; k < a.count; ++k) {
      u[k] = a.data[k * plane + i];
      v[k] = b.data[k * plane + i];
    }
    const double nu = std::sqrt(u.square().sum());
    const double nv = std::sqrt(v.square().sum());
    if (nu == 0.0 || nv == 0.0) {
      angles[i] = 0.0;
      continue;
    }
    // Angle between unit vectors via 2 atan2(|u-v|, |u+v|), accurate near 0.
    const ArrayXd uu = u / nu, vv = v / nv;
    angles[i] = 2.0 * std::atan2(std::sqrt((uu - vv).square().sum()),
                                 std::sqrt((uu + vv).square().sum()));
  }
  return exact_mean(angles);
}

double ergas(const Image& x, const Image& y, const MetricsConfig& config) {
  require_same(x, y, "ergas");
  const Bands a = bands_of(x, "ergas"), b = bands_of(y, "ergas");
  ArrayXd terms(a.count);
  for (Index k = 0; k < a.count; ++k) {
    const double band_mean = exact_mean(config.ergas_reference_mean ? b.band(k) : a.band(k));
    if (band_mean == 0.0) {
      throw DegenerateInputError("ergas: band " + std::to_string(k) + " has zero mean");
    }
    const double e = std::sqrt(exact_mean((a.band(k) - b.band(k)).square())) / band_mean;
    terms[k] = e * e;
  }
  return 100.0 * config.resolution_ratio * std::sqrt(exact_mean(terms));
}

double scc(const Image& x, const Image& y) {
  require_same(x, y, "scc");
  const ArrayXd lx = laplacian_valid(bands_of(x, "scc"));
  const ArrayXd ly = laplacian_valid(bands_of(y, "scc"));
  const double mx = exact_mean(lx), my = exact_mean(ly);
  const ArrayXd dx = lx - mx, dy = ly - my;
  const double vx = exact_mean(dx.square()), vy = exact_mean(dy.square());
  if (vx == 0.0 || vy == 0.0) {
    throw DegenerateInputError("scc: Laplacian response has zero variance");
  }
  return exact_mean(dx * dy) / std::sqrt(vx * vy);
}

double q_index(const Eigen::Ref<const ArrayXXd>& x, const Eigen::Ref<const ArrayXXd>& y,
               const MetricsConfig& config) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) throw ShapeError("q_index: shape mismatch");
  if (config.q_window == 0) return q_global(x, y);
  const Index win = config.q_window;
  if (win > x.rows() || win > x.cols()) {
    throw ParameterError("q_index: window " + std::to_string(win) + " exceeds image size");
  }
  const Index rows = x.rows() - win + 1, cols = x.cols() - win + 1;
  ArrayXd scores(rows * cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c)
      scores[r * cols + c] = q_global(x.block(r, c, win, win), y.block(r, c, win, win));
  return exact_mean(scores);
}

double q4(const Image& x, const Image& y, const MetricsConfig& config) {
  require_same(x, y, "q4");
  const Bands a = bands_of(x, "q4"), b = bands_of(y, "q4");
  if (a.count != 4) throw ShapeError("q4: expects 4 bands, got " + std::to_string(a.count));
  if (!config.band_weights.empty() && config.band_weights.size() != 4) {
    throw ConfigError("q4: band weights must have 4 entries");
  }
  return q_index(composite(a, config.band_weights), composite(b, config.band_weights), config);
}

double d_lambda(const Image& ms, const Image& fused, const MetricsConfig& config) {
  const Bands low = bands_of(ms, "d_lambda"), high = bands_of(fused, "d_lambda");
  if (low.count != high.count) throw ShapeError("d_lambda: band counts differ");
  if (low.count < 2) throw ShapeError("d_lambda: needs at least 2 bands");
  scale_between(low, high, "d_lambda");
  const Index k = low.count;
  ArrayXd terms(k * (k - 1));
  Index t = 0;
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < k; ++j) {
      if (i == j) continue;
      const double d = q_index(low.band(i), low.band(j), config) -
                       q_index(high.band(i), high.band(j), config);
      terms[t++] = std::pow(std::abs(d), config.p);
    }
  return std::pow(exact_mean(terms), 1.0 / config.p);
}

double d_s(const Image& ms, const Image& fused, const Image& pan, const MetricsConfig& config) {
  const Bands low = bands_of(ms, "d_s"), high = bands_of(fused, "d_s");
  const Bands p = bands_of(pan, "d_s");
  if (low.count != high.count) throw ShapeError("d_s: band counts differ");
  if (p.count != 1 || p.height != high.height || p.width != high.width) {
    throw ShapeError("d_s: PAN must be (1, H, W) matching the fused image");
  }
  const int s = scale_between(low, high, "d_s");
  const Image pan_low = wald_downsample(pan, s);
  const Bands pl = bands_of(pan_low, "d_s");
  ArrayXd terms(low.count);
  for (Index i = 0; i < low.count; ++i) {
    const double d = q_index(high.band(i), p.band(0), config) -
                     q_index(low.band(i), pl.band(0), config);
    terms[i] = std::pow(std::abs(d), config.q);
  }
  return std::pow(exact_mean(terms), 1.0 / config.q);
}

double qnr(double d_lambda_value, double d_s_value, const MetricsConfig& config) {
  const auto in_range = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_range(d_lambda_value) || !in_range(d_s_value)) {
    throw ContractError("qnr: distortions must lie in [0, 1], got D_lambda=" +
                        std::to_string(d_lambda_value) + ", D_s=" + std::to_string(d_s_value));
  }
  return std::pow(1.0 - d_lambda_value, config.alpha) * std::pow(1.0 - d_s_value, config.beta);
}

MetricsReport reduced_resolution(const Image& prediction, const Image& reference,
                                 const MetricsConfig& config) {
  config.validate();
  MetricsReport report;
  report.config = config;
  report.values["sam"] = sam(prediction, reference);
  report.values["ergas"] = ergas(prediction, reference, config);
  report.values["scc"] = scc(prediction, reference);
  report.values["q4"] = q4(prediction, reference, config);
  return report;
}

MetricsReport full_resolution(const Image& fused, const Image& ms, const Image& pan,
                              const MetricsConfig& config) {
  config.validate();
  MetricsReport report;
  report.config = config;
  const double dl = d_lambda(ms, fused, config);
  const double ds = d_s(ms, fused, pan, config);
  report.values["d_lambda"] = dl;
  report.values["d_s"] = ds;
  report.values["qnr"] = qnr(dl, ds, config);
  return report;
}

}  // namespace msdn::metrics
