#include <doctest.h>

#include <cmath>
#include <numbers>

#include "metric_oracles.hpp"
#include "msdn/data.hpp"
#include "msdn/metrics.hpp"
#include "msdn/ops.hpp"
#include "support.hpp"

using namespace msdn;
using namespace msdn::metrics;
using msdn::testing::random_tensor;
namespace oracle = msdn::testing::oracle;

namespace {

Image img(const Shape& s, std::initializer_list<double> v) { return Image::from_values(s, v); }

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("exact summation") {
  const std::vector<double> v{1e100, 1.0, -1e100, 1e-3};
  CHECK(exact_sum(v) == 1.001);
  const std::vector<double> tenths(10, 0.1);
  CHECK(exact_sum(tenths) == 1.0);
  CHECK(exact_sum({}) == 0.0);
}

TEST_CASE("rmse") {
  Rng rng(1);
  const Image x = random_tensor(Shape{2, 3, 3}, rng);
  const Image y = random_tensor(Shape{2, 3, 3}, rng);
  CHECK(rmse(x, x) == 0.0);
  CHECK(rmse(img(Shape{2}, {0, 0}), img(Shape{2}, {3, 4})) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));
  CHECK(rmse(scale(x, 2.0), scale(y, 2.0)) == doctest::Approx(2 * rmse(x, y)).epsilon(1e-15));
  CHECK_THROWS_AS(rmse(x, random_tensor(Shape{2, 3, 4}, rng)), ShapeError);
}

TEST_CASE("sam") {
  Rng rng(2);
  const Image x = random_tensor(Shape{4, 3, 3}, rng, 0.1, 1);
  CHECK(sam(x, x) == 0.0);
  CHECK(std::abs(sam(scale(x, 2.0), x)) < 1e-15);
  CHECK(sam(img(Shape{2, 1, 1}, {1, 0}), img(Shape{2, 1, 1}, {0, 1})) ==
        doctest::Approx(std::numbers::pi / 2).epsilon(1e-15));
  // A zero spectral vector contributes angle 0.
  CHECK(sam(img(Shape{2, 1, 2}, {0, 1, 0, 0}), img(Shape{2, 1, 2}, {1, 0, 0, 1})) ==
        doctest::Approx(std::numbers::pi / 4).epsilon(1e-15));
  CHECK_THROWS_AS(sam(img(Shape{1, 1, 1}, {1}), img(Shape{1, 1, 1}, {1})), ShapeError);
}

TEST_CASE("ergas") {
  Rng rng(3);
  const Image x = random_tensor(Shape{4, 4, 4}, rng, 0.1, 1);
  const Image y = random_tensor(Shape{4, 4, 4}, rng, 0.1, 1);
  CHECK(ergas(x, x) == 0.0);
  CHECK(ergas(Image::full(Shape{1, 2, 2}, 10.0), Image::full(Shape{1, 2, 2}, 12.0)) ==
        doctest::Approx(5.0).epsilon(1e-15));
  CHECK(ergas(scale(x, 2.0), scale(y, 2.0)) == doctest::Approx(ergas(x, y)).epsilon(1e-14));
  CHECK_THROWS_AS(ergas(Image::zeros(Shape{1, 2, 2}), Image::full(Shape{1, 2, 2}, 1.0)),
                  DegenerateInputError);

  MetricsConfig by_reference;
  by_reference.ergas_reference_mean = true;
  CHECK(ergas(Image::full(Shape{1, 2, 2}, 10.0), Image::full(Shape{1, 2, 2}, 12.0), by_reference) ==
        doctest::Approx(100.0 * 0.25 * 2.0 / 12.0).epsilon(1e-15));
}

TEST_CASE("scc") {
  Rng rng(4);
  const Image x = random_tensor(Shape{4, 6, 6}, rng);
  const Image y = random_tensor(Shape{4, 6, 6}, rng);
  CHECK(std::abs(scc(x, x) - 1.0) < 1e-9);
  CHECK(std::abs(scc(x, neg(x)) + 1.0) < 1e-9);
  CHECK(scc(x, y) == doctest::Approx(oracle::scc(x, y)).epsilon(1e-12));
  CHECK_THROWS_AS(scc(Image::full(Shape{1, 4, 4}, 1.0), x), ShapeError);
  CHECK_THROWS_AS(scc(Image::full(Shape{4, 6, 6}, 1.0), x), DegenerateInputError);
}

TEST_CASE("q index") {
  Eigen::ArrayXXd x(2, 3);
  x << 1, 2, 3, 4, 5, 7;
  CHECK(q_index(x, x) == doctest::Approx(1.0).epsilon(1e-15));
  Eigen::ArrayXXd a(1, 2), b(1, 2);
  a << 0, 1;
  b << 1, 0;
  CHECK(q_index(a, b) == doctest::Approx(-1.0).epsilon(1e-15));
  const Eigen::ArrayXXd flat = Eigen::ArrayXXd::Constant(2, 2, 0.3);
  CHECK(q_index(flat, flat) == 1.0);
  CHECK(q_index(flat, Eigen::ArrayXXd::Constant(2, 2, 0.4)) == 0.0);

  MetricsConfig windowed;
  windowed.q_window = 3;
  Eigen::ArrayXXd big(4, 4);
  big << 1, 2, 3, 4, 2, 5, 1, 3, 7, 1, 2, 6, 3, 3, 8, 1;
  CHECK(q_index(big, big, windowed) == doctest::Approx(1.0).epsilon(1e-15));
  windowed.q_window = 5;
  CHECK_THROWS_AS(q_index(big, big, windowed), ParameterError);
}

TEST_CASE("q4") {
  Rng rng(5);
  const Image x = random_tensor(Shape{4, 5, 5}, rng, 0.1, 1);
  CHECK(std::abs(q4(x, x) - 1.0) < 1e-9);

  const Image shifted = add(x, Image::full(x.shape(), 0.5));
  const double shifted_q = q4(x, shifted);
  CHECK(shifted_q < 1.0);
  // Correlation and contrast stay 1, so q4 is the luminance factor alone.
  const auto mean_composite = [](const Image& t) {
    double s = 0;
    for (Index i = 0; i < t.numel(); ++i) s += t[i];
    return s / double(t.numel());
  };
  const double mx = mean_composite(x), my = mx + 0.5;
  CHECK(shifted_q == doctest::Approx(2 * mx * my / (mx * mx + my * my)).epsilon(1e-12));

  const Image y = random_tensor(Shape{4, 5, 5}, rng, 0.1, 1);
  const std::array<int, 4> perm{2, 0, 3, 1};
  Buffer<double> px(x.numel()), py(y.numel());
  for (int b = 0; b < 4; ++b) {
    px.segment(b * 25, 25) = x.data().segment(perm[b] * 25, 25);
    py.segment(b * 25, 25) = y.data().segment(perm[b] * 25, 25);
  }
  CHECK(q4(Image::from_buffer(x.shape(), px), Image::from_buffer(y.shape(), py)) ==
        doctest::Approx(q4(x, y)).epsilon(1e-12));
  CHECK_THROWS_AS(q4(random_tensor(Shape{3, 5, 5}, rng), random_tensor(Shape{3, 5, 5}, rng)), ShapeError);
}

TEST_CASE("spectral distortion") {
  Rng rng(6);
  const Image ms = random_tensor(Shape{4, 4, 4}, rng, 0.1, 1);
  CHECK(d_lambda(ms, upsample_nearest(ms, 4)) == 0.0);
  CHECK(d_lambda(ms, ms) == 0.0);
  const Image fused = random_tensor(Shape{4, 8, 8}, rng, 0.1, 1);
  CHECK(d_lambda(ms, fused) == doctest::Approx(oracle::d_lambda(ms, fused)).epsilon(1e-12));
  CHECK_THROWS_AS(d_lambda(random_tensor(Shape{1, 4, 4}, rng), random_tensor(Shape{1, 8, 8}, rng)),
                  ShapeError);
  CHECK_THROWS_AS(d_lambda(ms, random_tensor(Shape{4, 8, 7}, rng)), ShapeError);
}

TEST_CASE("spatial distortion") {
  Rng rng(7);
  const Image pan = random_tensor(Shape{1, 8, 8}, rng, 0.1, 1);
  Buffer<double> fused_values(4 * 64);
  for (int b = 0; b < 4; ++b) fused_values.segment(b * 64, 64) = pan.data();
  const Image fused = Image::from_buffer(Shape{4, 8, 8}, fused_values);
  const Image pan_low = wald_downsample(pan, 2);
  Buffer<double> ms_values(4 * 16);
  for (int b = 0; b < 4; ++b) ms_values.segment(b * 16, 16) = pan_low.data();
  CHECK(d_s(Image::from_buffer(Shape{4, 4, 4}, ms_values), fused, pan) < 1e-15);

  const Image ms = random_tensor(Shape{4, 4, 4}, rng, 0.1, 1);
  const Image h = random_tensor(Shape{4, 8, 8}, rng, 0.1, 1);
  CHECK(d_s(ms, h, pan) == doctest::Approx(oracle::d_s(ms, h, pan)).epsilon(1e-12));
  CHECK_THROWS_AS(d_s(ms, h, random_tensor(Shape{1, 8, 4}, rng)), ShapeError);
}

TEST_CASE("qnr") {
  CHECK(qnr(0, 0) == 1.0);
  CHECK(qnr(1, 0.3) == 0.0);
  CHECK(qnr(0.1, 0.2) == doctest::Approx(0.72).epsilon(1e-15));
  MetricsConfig c;
  c.alpha = 2;
  CHECK(qnr(0.5, 0.0, c) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK_THROWS_AS(qnr(-0.1, 0.0), ContractError);
  CHECK_THROWS_AS(qnr(0.0, 1.5), ContractError);
}

TEST_CASE("reports and bounds") {
  Rng rng(8);
  const Image x = random_tensor(Shape{4, 8, 8}, rng, 0.05, 1);
  const Image y = random_tensor(Shape{4, 8, 8}, rng, 0.05, 1);
  const MetricsReport r = reduced_resolution(x, y);
  CHECK(r.values.size() == 4);
  CHECK(r.values.at("sam") >= 0.0);
  CHECK(r.values.at("sam") <= std::numbers::pi);
  CHECK(std::abs(r.values.at("scc")) <= 1.0);
  CHECK(std::abs(r.values.at("q4")) <= 1.0);

  const Image ms = random_tensor(Shape{4, 4, 4}, rng, 0.05, 1);
  const Image pan = random_tensor(Shape{1, 8, 8}, rng, 0.05, 1);
  const MetricsReport f = full_resolution(x, ms, pan);
  CHECK(f.values.at("qnr") == doctest::Approx((1 - f.values.at("d_lambda")) * (1 - f.values.at("d_s"))));
  CHECK(f.values.at("d_lambda") >= 0.0);
  CHECK(f.values.at("d_s") >= 0.0);

  // A leading batch axis of extent 1 is accepted.
  CHECK(sam(reshape(x, Shape{1, 4, 8, 8}), reshape(y, Shape{1, 4, 8, 8})) == r.values.at("sam"));

  MetricsConfig bad;
  bad.band_weights = {0.5, 0.5, 0.5, 0.5};
  CHECK_THROWS_AS(reduced_resolution(x, y, bad), ConfigError);
}

TEST_CASE("oracle agreement on random instances") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    CAPTURE(trial);
    const Image x = random_tensor(Shape{4, 8, 8}, rng, 0.05, 1);
    const Image y = random_tensor(Shape{4, 8, 8}, rng, 0.05, 1);
    const Image ms = random_tensor(Shape{4, 4, 4}, rng, 0.05, 1);
    const Image pan = random_tensor(Shape{1, 8, 8}, rng, 0.05, 1);
    CHECK(std::abs(rmse(x, y) - oracle::rmse(x, y)) < 1e-9);
    CHECK(std::abs(sam(x, y) - oracle::sam(x, y)) < 1e-9);
    CHECK(std::abs(ergas(x, y) - oracle::ergas(x, y, 0.25)) < 1e-9);
    CHECK(std::abs(scc(x, y) - oracle::scc(x, y)) < 1e-9);
    CHECK(std::abs(q4(x, y) - oracle::q4(x, y)) < 1e-9);
    const double dl = d_lambda(ms, x), ds = d_s(ms, x, pan);
    CHECK(std::abs(dl - oracle::d_lambda(ms, x)) < 1e-9);
    CHECK(std::abs(ds - oracle::d_s(ms, x, pan)) < 1e-9);
    CHECK(std::abs(qnr(dl, ds) - oracle::qnr(oracle::d_lambda(ms, x), oracle::d_s(ms, x, pan))) < 1e-9);
  }
}

TEST_CASE("flipping prediction and reference together leaves metrics unchanged") {
  Rng rng(10);
  const Image x = random_tensor(Shape{4, 8, 8}, rng, 0.05, 1);
  const Image y = random_tensor(Shape{4, 8, 8}, rng, 0.05, 1);
  const auto a = reduced_resolution(x, y).values;
  for (bool horizontal : {true, false}) {
    const auto b = reduced_resolution(flip(x, horizontal), flip(y, horizontal)).values;
    for (const auto& [name, value] : a) CHECK(b.at(name) == doctest::Approx(value).epsilon(1e-12));
  }
}

}  // TEST_SUITE
