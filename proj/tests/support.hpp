#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "msdn/parameter.hpp"
#include "msdn/tensor.hpp"

namespace msdn::testing {

template <typename S = double>
Tensor<S> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                        double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Buffer<S> b(shape.numel());
  for (Index i = 0; i < b.size(); ++i) b[i] = static_cast<S>(dist(rng));
  return Tensor<S>::from_buffer(shape, std::move(b));
}

template <typename S = double>
Tensor<S> random_leaf(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                      double hi = 1.0) {
  return Tensor<S>::leaf(shape, random_tensor<S>(shape, rng, lo, hi).data());
}

template <typename S>
std::vector<S> values(const Tensor<S>& t) {
  return std::vector<S>(t.raw(), t.raw() + t.numel());
}

template <typename S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  double m = 0;
  for (Index i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

// Direct 7-loop cross-correlation with zero padding.
inline std::vector<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w,
                                       const Tensor<double>& b) {
  const Index n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index co = w.dim(0), k = w.dim(2), p = k / 2;
  std::vector<double> out(n * co * h * wd);
  for (Index in = 0; in < n; ++in)
    for (Index o = 0; o < co; ++o)
      for (Index y = 0; y < h; ++y)
        for (Index xx = 0; xx < wd; ++xx) {
          double acc = b[o];
          for (Index c = 0; c < ci; ++c)
            for (Index ky = 0; ky < k; ++ky)
              for (Index kx = 0; kx < k; ++kx) {
                const Index sy = y + ky - p, sx = xx + kx - p;
                if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                acc += w.at(o, c, ky, kx) * x.at(in, c, sy, sx);
              }
          out[((in * co + o) * h + y) * wd + xx] = acc;
        }
  return out;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("msdn_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace msdn::testing
