#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "glocal/error.hpp"
#include "glocal/metrics.hpp"
#include "oracles.hpp"

using namespace glocal;

namespace {

struct Instance {
  std::vector<double> scores;
  std::vector<int> labels;
};

Instance random_instance(std::mt19937_64& rng, int n, bool ties) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Instance inst;
  for (int i = 0; i < n; ++i) {
    double s = u(rng);
    if (ties) s = std::round(s * 4) / 4;
    inst.scores.push_back(s);
    inst.labels.push_back(u(rng) < 0.4 ? 1 : 0);
  }
  inst.labels[0] = 1;
  inst.labels[1] = 0;
  return inst;
}

struct PixelSet {
  std::vector<Eigen::MatrixXd> maps, masks;
};

PixelSet random_pixels(std::mt19937_64& rng, int images, int h, int w, bool ties) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PixelSet set;
  for (int i = 0; i < images; ++i) {
    Eigen::MatrixXd map(h, w), mask(h, w);
    for (Eigen::Index k = 0; k < map.size(); ++k) {
      mask(k) = u(rng) < 0.3 ? 1.0 : 0.0;
      double v = u(rng) + 0.4 * mask(k);
      map(k) = ties ? std::round(v * 5) / 5 : v;
    }
    set.maps.push_back(map);
    set.masks.push_back(mask);
  }
  set.masks[0](0, 0) = 1.0;
  set.masks[0](h - 1, w - 1) = 0.0;
  return set;
}

double run_auroc(const Instance& i) { return auroc(i.scores, i.labels); }
double run_ap(const Instance& i) { return average_precision(i.scores, i.labels); }

}  // namespace

TEST_CASE("auroc examples") {
  CHECK(auroc(std::vector{0.1, 0.9}, std::vector{0, 1}) == 1.0);
  CHECK(auroc(std::vector{0.5, 0.5}, std::vector{0, 1}) == 0.5);
  CHECK(auroc(std::vector{0.9, 0.1}, std::vector{0, 1}) == 0.0);
  CHECK_THROWS_AS(auroc(std::vector{0.1, 0.9}, std::vector{1, 1}), Error);
  CHECK_THROWS_AS(auroc(std::vector{0.1, 0.9}, std::vector{1}), Error);
}

TEST_CASE("auroc matches the pairwise oracle") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Instance inst = random_instance(rng, 2 + trial % 40, trial % 2 == 0);
    CHECK(std::abs(run_auroc(inst) - oracle::auroc_pairs(inst.scores, inst.labels)) < 1e-12);
  }
}

TEST_CASE("auroc properties") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Instance inst = random_instance(rng, 20, false);
    Instance neg = inst, warped = inst;
    for (double& s : neg.scores) s = -s;
    for (double& s : warped.scores) s = std::exp(3 * s) - 7;
    CHECK(std::abs(run_auroc(inst) + run_auroc(neg) - 1.0) < 1e-12);
    CHECK(run_auroc(warped) == run_auroc(inst));
  }
}

TEST_CASE("average precision examples") {
  CHECK(average_precision(std::vector{0.3}, std::vector{1}) == 1.0);
  CHECK(average_precision(std::vector{0.2, 0.7, 0.4}, std::vector{0, 0, 1}) == doctest::Approx(0.5));
  CHECK(average_precision(std::vector{0.9, 0.1}, std::vector{0, 1}) == 0.5);
  CHECK_THROWS_AS(average_precision(std::vector{0.1, 0.9}, std::vector{0, 0}), Error);
}

TEST_CASE("average precision matches the threshold sweep") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Instance inst = random_instance(rng, 2 + trial % 40, trial % 2 == 0);
    CHECK(std::abs(run_ap(inst) - oracle::ap_sweep(inst.scores, inst.labels)) < 1e-12);
  }
}

TEST_CASE("connected components use 8-connectivity") {
  Eigen::MatrixXd mask(4, 5);
  mask << 1, 0, 0, 0, 1,  //
      0, 1, 0, 0, 1,      //
      0, 0, 0, 0, 0,      //
      1, 1, 0, 1, 0;
  int count = 0;
  const Eigen::MatrixXi labels = connected_components(mask, &count);
  CHECK(count == 4);
  CHECK(labels(0, 0) == labels(1, 1));
  CHECK(labels(0, 4) == labels(1, 4));
  CHECK(labels(3, 0) == labels(3, 1));
  CHECK(labels(0, 1) == 0);
  CHECK(oracle::regions(mask).size() == 4);
}

TEST_CASE("aupro examples") {
  Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(8, 8);
  mask.block(1, 1, 2, 3).setOnes();
  mask.block(5, 5, 2, 2).setOnes();
  CHECK(aupro({mask}, {mask}) == 1.0);
  CHECK(aupro({(1.0 - mask.array()).matrix()}, {mask}) == 0.0);
  CHECK_THROWS_AS(aupro({mask}, {Eigen::MatrixXd::Zero(8, 8)}), Error);
  CHECK_THROWS_AS(aupro({mask}, {mask}, 0.0), Error);
  CHECK_THROWS_AS(aupro({mask}, {Eigen::MatrixXd::Zero(4, 8)}), Error);
}

TEST_CASE("aupro on an 8x8 two-region instance matches the exhaustive sweep") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(8, 8);
    mask.block(1, 1, 2, 3).setOnes();
    mask.block(5, 4, 3, 2).setOnes();
    Eigen::MatrixXd map(8, 8);
    for (Eigen::Index k = 0; k < 64; ++k) map(k) = u(rng) + 0.5 * mask(k);
    REQUIRE(oracle::regions(mask).size() == 2);
    CHECK(std::abs(aupro({map}, {mask}) - oracle::aupro_sweep({map}, {mask}, 0.3)) < 1e-9);
  }
}

TEST_CASE("aupro matches the exhaustive sweep on random instances") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int images = 1 + trial % 3;
    const int h = 2 + trial % 4, w = 2 + (trial / 4) % 4;
    const PixelSet set = random_pixels(rng, images, h, w, trial % 3 == 0);
    for (double cap : {0.3, 1.0, 0.05}) {
      CHECK(std::abs(aupro(set.maps, set.masks, cap) -
                     oracle::aupro_sweep(set.maps, set.masks, cap)) < 1e-9);
    }
  }
}

TEST_CASE("aupro properties") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const PixelSet set = random_pixels(rng, 2, 5, 6, false);
    PixelSet warped = set;
    for (auto& m : warped.maps) m = (2.0 * m.array()).exp().matrix();
    CHECK(std::abs(aupro(set.maps, set.masks) - aupro(warped.maps, warped.masks)) < 1e-12);

    // Image order does not matter.
    const PixelSet swapped{{set.maps[1], set.maps[0]}, {set.masks[1], set.masks[0]}};
    CHECK(std::abs(aupro(set.maps, set.masks) - aupro(swapped.maps, swapped.masks)) < 1e-12);
  }
}

TEST_CASE("single-pixel regions at cap 1 reduce to pixel recall against FPR") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Eigen::MatrixXd> maps, masks;
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) {
      Eigen::MatrixXd map(3, 3), mask = Eigen::MatrixXd::Zero(3, 3);
      mask(int(u(rng) * 3), int(u(rng) * 3)) = 1.0;
      for (Eigen::Index k = 0; k < 9; ++k) {
        map(k) = u(rng);
        scores.push_back(map(k));
        labels.push_back(int(mask(k)));
      }
      maps.push_back(map);
      masks.push_back(mask);
    }
    // Recall vs FPR area is the ROC area.
    CHECK(std::abs(aupro(maps, masks, 1.0) - auroc(scores, labels)) < 1e-12);
  }
}

TEST_CASE("report aggregation") {
  std::vector<ScoredSample> samples;
  auto add = [&](const std::string& cls, int label, double score, double fill) {
    ScoredSample s;
    s.class_name = cls;
    s.label = label;
    s.score = score;
    s.mask = Eigen::MatrixXd::Zero(4, 4);
    if (label) s.mask.block(1, 1, 2, 2).setOnes();
    s.map = s.mask * fill;
    samples.push_back(s);
  };
  // Class a: perfect. Class b: only normal samples.
  add("a", 0, 0.1, 1.0);
  add("a", 1, 0.9, 1.0);
  add("a", 1, 0.8, 1.0);
  add("b", 0, 0.3, 1.0);
  add("b", 0, 0.4, 1.0);
  const EvalReport r = build_report(samples, 0.3);
  REQUIRE(r.per_class.size() == 2);
  CHECK(r.samples == 5);
  CHECK(r.per_class[0].class_name == "a");
  CHECK(*r.per_class[0].image_auroc == 1.0);
  CHECK(*r.per_class[0].image_ap == 1.0);
  CHECK(*r.per_class[0].pixel_auroc == 1.0);
  CHECK(*r.per_class[0].pixel_aupro == 1.0);
  CHECK_FALSE(r.per_class[1].image_auroc.has_value());
  CHECK_FALSE(r.per_class[1].pixel_aupro.has_value());
  CHECK(*r.image_auroc == 1.0);

  const auto json = to_json(r);
  CHECK(json["samples"] == 5);
  CHECK(json["per_class"][1]["image_auroc"].is_null());
  CHECK(to_table(r).find("mean") != std::string::npos);

  // Shuffled order gives the same report.
  std::vector<ScoredSample> reversed(samples.rbegin(), samples.rend());
  CHECK(to_json(build_report(reversed, 0.3)) == json);
}

TEST_CASE("means are unweighted over classes") {
  std::vector<ScoredSample> samples;
  auto add = [&](const std::string& cls, int label, double score) {
    ScoredSample s;
    s.class_name = cls;
    s.label = label;
    s.score = score;
    s.map = Eigen::MatrixXd::Zero(2, 2);
    s.mask = Eigen::MatrixXd::Zero(2, 2);
    s.has_mask = false;
    samples.push_back(s);
  };
  add("a", 0, 0.1);
  add("a", 1, 0.9);
  add("b", 0, 0.9);
  add("b", 1, 0.1);
  add("b", 0, 0.95);
  const EvalReport r = build_report(samples, 0.3);
  CHECK(*r.image_auroc == doctest::Approx(0.5));
  CHECK_FALSE(r.pixel_auroc.has_value());
}
