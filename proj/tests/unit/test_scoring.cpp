#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "glocal/error.hpp"
#include "glocal/scoring.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace glocal;
using gradcheck::uniform;

namespace {

Eigen::VectorXd unit(std::mt19937_64& rng, int d) {
  return gradcheck::unit_rows(1, d, rng).row(0).transpose();
}

// Text vectors whose cosines with f = e0 are exactly (sn, sa).
struct Pair {
  Eigen::VectorXd tn, ta, f;
};
Pair with_similarities(double sn, double sa) {
  Pair p{Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3), Eigen::VectorXd::Unit(3, 0)};
  p.tn << sn, std::sqrt(1 - sn * sn), 0;
  p.ta << sa, 0, std::sqrt(1 - sa * sa);
  return p;
}

SimilarityMaps random_maps(int h, int w, std::mt19937_64& rng) {
  SimilarityMaps m;
  m.anomaly = uniform(h, w, rng, 0.0, 1.0);
  m.normal = (1.0 - m.anomaly.array()).matrix();
  return m;
}

}  // namespace

TEST_CASE("class probability examples") {
  std::mt19937_64 rng(1);
  const Eigen::VectorXd f = unit(rng, 8), t = unit(rng, 8);
  const auto eq = class_probability(t, t, f, 0.07);
  CHECK(eq.normal == 0.5);
  CHECK(eq.anomaly == 0.5);

  auto p = with_similarities(1.0, 0.0);
  CHECK(class_probability(p.tn, p.ta, p.f, 1.0).anomaly ==
        doctest::Approx(double(oracle::anomaly_probability(1, 0, 1))).epsilon(1e-12));
  CHECK(class_probability(p.tn, p.ta, p.f, 1.0).anomaly == doctest::Approx(0.26894).epsilon(1e-5));

  p = with_similarities(0.2, 0.3);
  const double pa = class_probability(p.tn, p.ta, p.f, 0.01).anomaly;
  CHECK(pa == doctest::Approx(double(oracle::anomaly_probability(0.2L, 0.3L, 0.01L))).epsilon(1e-12));
  CHECK(pa == doctest::Approx(0.99995).epsilon(1e-5));
}

TEST_CASE("class probability errors") {
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(4), e = Eigen::VectorXd::Unit(4, 0);
  CHECK_THROWS_AS(class_probability(z, e, e, 0.07), Error);
  CHECK_THROWS_AS(class_probability(e, e, e, 0.0), Error);
  CHECK_THROWS_AS(class_probability(e, e, Eigen::VectorXd::Unit(3, 0), 0.07), Error);
}

TEST_CASE("class probability properties over random draws") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> sim(-0.9, 0.9), tau(0.01, 2.0), shift(-0.05, 0.05);
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 2 + trial % 30;
    const Eigen::VectorXd tn = unit(rng, d), ta = unit(rng, d), f = unit(rng, d);
    const double t = tau(rng);
    const auto p = class_probability(tn, ta, f, t);
    CHECK(std::abs(p.normal + p.anomaly - 1.0) < 1e-6);

    const double sn = sim(rng), sa = sim(rng), c = shift(rng);
    const auto base = with_similarities(sn, sa);
    const auto shifted = with_similarities(sn + c, sa + c);
    CHECK(std::abs(class_probability(base.tn, base.ta, base.f, t).anomaly -
                   class_probability(shifted.tn, shifted.ta, shifted.f, t).anomaly) < 1e-6);

    const double up = std::min(sa + 0.05, 0.99);
    const auto higher = with_similarities(sn, up);
    const double pa0 = class_probability(base.tn, base.ta, base.f, t).anomaly;
    const double pa1 = class_probability(higher.tn, higher.ta, higher.f, t).anomaly;
    // Strict unless both sides saturate in float64.
    CHECK((pa1 > pa0 || (pa0 == 1.0 && pa1 == 1.0)));
  }
}

TEST_CASE("local similarity maps") {
  std::mt19937_64 rng(3);
  const Eigen::VectorXd ln = unit(rng, 6), la = unit(rng, 6);

  SUBCASE("constant grid") {
    const Eigen::MatrixXd grid = gradcheck::unit_rows(1, 6, rng).replicate(9, 1);
    const auto m = local_similarity_maps(ln, la, grid, 3, 3, 0.07);
    CHECK((m.anomaly.array() == m.anomaly(0, 0)).all());
  }
  SUBCASE("equal prompts") {
    const auto m = local_similarity_maps(ln, ln, gradcheck::unit_rows(6, 6, rng), 2, 3, 0.07);
    CHECK((m.anomaly.array() == 0.5).all());
    CHECK((m.normal.array() == 0.5).all());
  }
  SUBCASE("per-pixel oracle and row-major layout") {
    const Eigen::MatrixXd grid = gradcheck::unit_rows(6, 6, rng);
    const auto m = local_similarity_maps(ln, la, grid, 2, 3, 0.07);
    for (int j = 0; j < 2; ++j) {
      for (int k = 0; k < 3; ++k) {
        const auto p = class_probability(ln, la, grid.row(j * 3 + k).transpose(), 0.07);
        CHECK(m.anomaly(j, k) == p.anomaly);
        CHECK(m.normal(j, k) == p.normal);
        CHECK(std::abs(m.normal(j, k) + m.anomaly(j, k) - 1.0) < 1e-6);
      }
    }
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(local_similarity_maps(ln, la, gradcheck::unit_rows(4, 5, rng), 2, 2, 0.07),
                    Error);
    CHECK_THROWS_AS(local_similarity_maps(ln, la, gradcheck::unit_rows(4, 6, rng), 3, 2, 0.07),
                    Error);
  }
}

TEST_CASE("local similarity maps sum to one over random draws") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> tau(0.01, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 2 + trial % 16;
    const int h = 1 + trial % 4, w = 1 + (trial / 4) % 4;
    const auto m = local_similarity_maps(unit(rng, d), unit(rng, d),
                                         gradcheck::unit_rows(h * w, d, rng), h, w, tau(rng));
    CHECK(((m.normal + m.anomaly).array() - 1.0).abs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("upsample") {
  const Eigen::MatrixXd c = Eigen::MatrixXd::Constant(3, 5, 0.3);
  CHECK(((upsample(c, 17, 9).array() - 0.3).abs() < 1e-15).all());

  std::mt19937_64 rng(5);
  const Eigen::MatrixXd m = uniform(4, 3, rng);
  CHECK(upsample(m, 4, 3) == m);

  Eigen::MatrixXd stripes(2, 2);
  stripes << 0, 1, 0, 1;
  CHECK((upsample(stripes, 4, 4) - oracle::bilinear(stripes, 4, 4)).cwiseAbs().maxCoeff() < 1e-15);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = 1 + trial % 5, w = 1 + trial % 7;
    const Eigen::MatrixXd x = uniform(h, w, rng);
    const int th = h + trial % 13, tw = w + trial % 11;
    CHECK((upsample(x, th, tw) - oracle::bilinear(x, th, tw)).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(upsample(m, 3, 3), Error);
}

TEST_CASE("graph upsample agrees and has correct gradients") {
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd m = uniform(3, 4, rng);
  CHECK((graph::upsample(ad::constant(m), 9, 10).value() - upsample(m, 9, 10)).norm() < 1e-14);
  const Eigen::MatrixXd probe = uniform(9, 10, rng);
  auto f = [&](const std::vector<ad::Var>& x) {
    return ad::sum(ad::mul(graph::upsample(x[0], 9, 10), ad::constant(probe)));
  };
  CHECK(gradcheck::check(f, {m}) < 1e-8);
}

TEST_CASE("gaussian kernel") {
  for (double sigma : {0.3, 1.0, 2.5, 8.0, 13.7}) {
    const Eigen::VectorXd k = gaussian_kernel(sigma);
    CHECK(std::abs(k.sum() - 1.0) < 1e-9);
    CHECK(k.size() == 2 * static_cast<int>(std::ceil(3 * sigma)) + 1);
    CHECK((k - k.reverse()).norm() == 0.0);
  }
  CHECK_THROWS_AS(gaussian_kernel(0.0), Error);
}

TEST_CASE("impulse response is the discrete kernel") {
  Eigen::MatrixXd impulse = Eigen::MatrixXd::Zero(64, 64);
  impulse(32, 32) = 1.0;
  const Eigen::MatrixXd out = gaussian_filter(impulse, 8.0);
  const Eigen::VectorXd k = gaussian_kernel(8.0);
  const Eigen::MatrixXd expected_block = k * k.transpose();
  CHECK((out.block(8, 8, 49, 49) - expected_block).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(std::abs(out.sum() - 1.0) < 1e-12);
  CHECK((out - oracle::gaussian_smooth(impulse, 8.0)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("smoothing matches direct summation with reflection") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd m = uniform(8 + trial % 4, 9 + trial % 3, rng, 0, 1);
    const double sigma = 0.6 + 0.05 * (trial % 8);
    const Eigen::MatrixXd out = gaussian_filter(m, sigma);
    CHECK((out - oracle::gaussian_smooth(m, sigma)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(out.mean() - m.mean()) < 1e-12);
  }
}

TEST_CASE("Map formula") {
  std::mt19937_64 rng(8);
  const double delta = 1e-3;  // kernel is exactly [0, 1, 0]
  REQUIRE(gaussian_kernel(delta)(1) == 1.0);

  for (int trial = 0; trial < 20; ++trial) {
    const SimilarityMaps layer = random_maps(4, 4, rng);
    const Eigen::MatrixXd up = upsample(layer.anomaly, 16, 16);
    const Eigen::MatrixXd one = anomaly_map({layer}, 16, 16, delta);
    CHECK((one - up).cwiseAbs().maxCoeff() < 1e-15);

    const Eigen::MatrixXd two = anomaly_map({layer, layer}, 16, 16, delta);
    CHECK((two - 2.0 * up).cwiseAbs().maxCoeff() < 1e-15);

    const SimilarityMaps other = random_maps(4, 4, rng);
    const Eigen::MatrixXd sum = anomaly_map({layer, other}, 16, 16, 1.0);
    const Eigen::MatrixXd parts =
        anomaly_map({layer}, 16, 16, 1.0) + anomaly_map({other}, 16, 16, 1.0);
    CHECK((sum - parts).cwiseAbs().maxCoeff() < 1e-14);

    const SimilarityMaps swapped{(1.0 - layer.anomaly.array()).matrix(),
                                 (1.0 - layer.normal.array()).matrix()};
    CHECK((anomaly_map({swapped}, 16, 16, 2.0) - anomaly_map({layer}, 16, 16, 2.0))
              .cwiseAbs()
              .maxCoeff() < 1e-15);

    const Eigen::MatrixXd halved = anomaly_map({layer, other}, 16, 16, delta, true);
    CHECK((halved - 0.5 * anomaly_map({layer, other}, 16, 16, delta)).cwiseAbs().maxCoeff() <
          1e-15);
  }
  CHECK_THROWS_AS(anomaly_map({}, 4, 4, 1.0), Error);
}

TEST_CASE("constant maps stay constant under smoothing") {
  const Eigen::MatrixXd c = Eigen::MatrixXd::Constant(20, 20, 0.75);
  CHECK((gaussian_filter(c, 2.0).array() - 0.75).abs().maxCoeff() < 1e-12);
}

TEST_CASE("image score fusion") {
  AnomalyMap map;
  map.map = Eigen::MatrixXd::Zero(4, 4);
  map.map_normalizer = 2.0;
  CHECK(image_score(0.7, map, ScoreFusion::kTextOnly) == 0.7);
  CHECK(image_score(0.0, map, ScoreFusion::kTextPlusMapMax) == 0.0);
  map.map(1, 2) = 2.0;
  CHECK(image_score(1.0, map, ScoreFusion::kTextPlusMapMax) == 1.0);
  map.map(1, 2) = 1.0;
  CHECK(image_score(0.5, map, ScoreFusion::kTextPlusMapMax) == doctest::Approx(0.5));
}
