#include <doctest.h>

#include "msdn/classic_fusion.hpp"
#include "msdn/ops.hpp"
#include "oracles.hpp"

using namespace msdn;
using namespace msdn::testing;

TEST_SUITE("classic_fusion") {

TEST_CASE("hp details") {
  CHECK(hp_details(D::full(Shape{1, 6, 6}, 0.4), 5).data().isZero(0));
  Rng rng(1);
  const D pan = random_tensor(Shape{1, 6, 7}, rng, 0, 1);
  CHECK(hp_details(pan, 1).data().isZero(0));
  CHECK_THROWS_AS(hp_details(pan, 4), ParameterError);

  D impulse = D::zeros(Shape{1, 7, 7});
  impulse.mutable_data()[24] = 1.0;
  const D hp = hp_details(impulse, 3);
  for (Index r = 0; r < 7; ++r)
    for (Index c = 0; c < 7; ++c) {
      const Index dr = std::abs(r - 3), dc = std::abs(c - 3);
      const double expected = (dr == 0 && dc == 0) ? 8.0 / 9.0 : (dr <= 1 && dc <= 1) ? -1.0 / 9.0 : 0.0;
      CHECK(hp[r * 7 + c] == doctest::Approx(expected).epsilon(1e-15));
    }
}

TEST_CASE("hp of a smooth image has a smaller mean than the image") {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const D pan = box_filter(random_tensor(Shape{1, 16, 16}, rng, 0.2, 1.0), 5);
    CHECK(std::abs(hp_details(pan, 5).data().mean()) < std::abs(pan.data().mean()));
  }
}

TEST_CASE("component substitution") {
  InjectionConfig cfg;
  cfg.mode = InjectionMode::kComponentSubstitution;
  cfg.band_weights = {0.5, 0.5};
  const D ms = D::from_values(Shape{2, 1, 1}, {2, 4});
  CHECK(values(cs_inject(ms, D::full(Shape{1, 1, 1}, 5.0), cfg)) == std::vector<double>{4, 6});

  Rng rng(3);
  const D ms_up = random_tensor(Shape{4, 5, 5}, rng, 0, 1);
  const D intensity = weighted_intensity(ms_up, {});
  cfg.band_weights.clear();
  CHECK(values(cs_inject(ms_up, intensity, cfg)) == values(ms_up));

  const D pan = random_tensor(Shape{1, 5, 5}, rng, 0, 1);
  cfg.gain = {0.0};
  CHECK(values(cs_inject(ms_up, pan, cfg)) == values(ms_up));

  cfg.gain = {0.3};
  const D g1 = cs_inject(ms_up, pan, cfg);
  cfg.gain = {0.9};
  const D g2 = cs_inject(ms_up, pan, cfg);
  cfg.gain = {1.2};
  const D g12 = cs_inject(ms_up, pan, cfg);
  CHECK(max_abs_diff(g12, sub(add(g1, g2), ms_up)) < 1e-10);

  CHECK_THROWS_AS(cs_inject(ms_up, D::zeros(Shape{1, 5, 4}), cfg), ShapeError);
}

TEST_CASE("per-band gains and weights") {
  InjectionConfig cfg{{1.0, 0.0}, {0.25, 0.75}, 3, InjectionMode::kComponentSubstitution};
  const D ms = D::from_values(Shape{2, 1, 1}, {2, 4});
  // I = 0.5 + 3 = 3.5, P - I = 1.5
  CHECK(values(cs_inject(ms, D::full(Shape{1, 1, 1}, 5.0), cfg)) == std::vector<double>{3.5, 4});

  InjectionConfig bad = cfg;
  bad.band_weights = {0.5, 0.6};
  CHECK_THROWS_AS(bad.validate(2), ConfigError);
  bad = cfg;
  bad.hp_window = 4;
  CHECK_THROWS_AS(bad.validate(2), ConfigError);
}

TEST_CASE("multi-resolution injection") {
  Rng rng(4);
  const D ms_up = random_tensor(Shape{3, 6, 6}, rng, 0.1, 1);
  const D flat = D::full(Shape{1, 6, 6}, 0.7);
  InjectionConfig add_cfg;
  CHECK(values(mra_inject(ms_up, flat, add_cfg)) == values(ms_up));
  InjectionConfig sfim{{1.0}, {}, 5, InjectionMode::kSfimMultiplicative};
  CHECK(max_abs_diff(mra_inject(ms_up, flat, sfim), ms_up) < 1e-9);

  const D pan = random_tensor(Shape{1, 6, 6}, rng, 0.2, 1);
  add_cfg.gain = {0.0};
  CHECK(values(mra_inject(ms_up, pan, add_cfg)) == values(ms_up));

  // Additive: ms + g * (P - P_l); SFIM: ms * P / P_l with P_l the 5x5 box mean.
  const D low = box_filter(pan, 5);
  add_cfg.gain = {0.6};
  const D a = mra_inject(ms_up, pan, add_cfg);
  const D s = mra_inject(ms_up, pan, sfim);
  for (Index b = 0; b < 3; ++b)
    for (Index p = 0; p < 36; ++p) {
      CHECK(a[b * 36 + p] == doctest::Approx(ms_up[b * 36 + p] + 0.6 * (pan[p] - low[p])).epsilon(1e-14));
      CHECK(s[b * 36 + p] == doctest::Approx(ms_up[b * 36 + p] * pan[p] / low[p]).epsilon(1e-14));
    }
  CHECK(values(inject(ms_up, pan, sfim)) == values(s));
}

TEST_CASE("sfim doubles the image where the pan is twice its low-pass") {
  // With replicated borders every 3x3 mean of this stripe is 2.
  const D pan = D::from_values(Shape{1, 1, 3}, {1.0, 4.0, 1.0});
  const D ms = D::from_values(Shape{1, 1, 3}, {0.5, 0.25, 0.125});
  InjectionConfig sfim{{1.0}, {}, 3, InjectionMode::kSfimMultiplicative};
  const D out = mra_inject(ms, pan, sfim);
  CHECK(out[1] == doctest::Approx(2 * ms[1]).epsilon(1e-15));
  CHECK(out[0] == doctest::Approx(0.5 * ms[0]).epsilon(1e-15));
}

}  // TEST_SUITE
