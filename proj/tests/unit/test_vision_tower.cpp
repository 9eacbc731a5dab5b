#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "glocal/archive.hpp"
#include "glocal/autodiff.hpp"
#include "glocal/backbone.hpp"
#include "glocal/error.hpp"
#include "glocal/vision_tower.hpp"
#include "gradcheck.hpp"
#include "temp_dir.hpp"

using namespace glocal;

namespace {

const Towers& toy() {
  static const Towers towers = make_toy_backbone();
  return towers;
}

Image random_image(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Image img(size, size, 3);
  for (double& v : img.data) v = d(rng);
  return img;
}

}  // namespace

TEST_CASE("single row is returned unchanged") {
  Eigen::MatrixXd v(1, 5);
  v << 0.3, -2.0, 1.5, 0.0, 7.0;
  CHECK(vv_attention(v) == v);
}

TEST_CASE("identical rows are a fixed point") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::RowVectorXd row = gradcheck::uniform(1, 8, rng, -3, 3);
    const Eigen::MatrixXd v = row.replicate(6, 1);
    const Eigen::MatrixXd out = vv_attention(v);
    CHECK((out - v).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("2x2 hand case") {
  Eigen::MatrixXd v(2, 1);
  v << 1.0, 0.0;
  const long double e1 = std::exp(1.0L);
  const long double w0 = e1 / (e1 + 1.0L);
  const Eigen::MatrixXd weights = vv_attention_weights(v);
  CHECK(std::abs(weights(0, 0) - double(w0)) < 1e-12);
  CHECK(std::abs(weights(0, 1) - double(1.0L - w0)) < 1e-12);
  CHECK(std::abs(weights(1, 0) - 0.5) < 1e-12);
  const Eigen::MatrixXd out = vv_attention(v);
  CHECK(std::abs(out(0, 0) - double(w0)) < 1e-12);
  CHECK(std::abs(out(1, 0) - 0.5) < 1e-12);
  CHECK(out(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));
}

TEST_CASE("attention weights are row-stochastic") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::MatrixXd v = gradcheck::uniform(1 + trial % 9, 1 + trial % 5, rng, -4, 4);
    const Eigen::MatrixXd w = vv_attention_weights(v);
    CHECK((w.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
    CHECK(w.minCoeff() >= 0.0);
    // Ordinary softmax attention too.
    const Eigen::MatrixXd s = ad::softmax_rows(ad::constant(v * v.transpose())).value();
    CHECK((s.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("grid shapes follow resolution and patch size") {
  RunConfig cfg = toy_run_config();
  cfg.patch_tap_layers = {1, 2};
  cfg.vv_start_depth = 1;
  const VisualFeatures f = encode_image(*toy().vision, random_image(32, 3), cfg);
  CHECK(f.patch_grids.size() == 2);
  CHECK(f.grid_height == 4);
  CHECK(f.grid_width == 4);
  for (const auto& g : f.patch_grids) {
    CHECK(g.rows() == 16);
    CHECK(g.cols() == toy().vision->embed_dim());
    CHECK((g.rowwise().norm().array() - 1.0).abs().maxCoeff() < 1e-6);
  }
  CHECK(f.global_embedding.norm() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("encoding is deterministic and the global stream is independent") {
  const RunConfig cfg = toy_run_config();
  const Image img = random_image(32, 4);
  const VisualFeatures a = encode_image(*toy().vision, img, cfg);
  const VisualFeatures b = encode_image(*toy().vision, img, cfg);
  CHECK(a.global_embedding == b.global_embedding);
  for (std::size_t k = 0; k < a.patch_grids.size(); ++k) CHECK(a.patch_grids[k] == b.patch_grids[k]);

  const VisualFeatures global_only = toy().vision->encode(img, cfg, false);
  CHECK(global_only.global_embedding == a.global_embedding);
  CHECK(global_only.patch_grids.empty());
}

TEST_CASE("V-V branch changes the taps after the branch point only") {
  RunConfig early = toy_run_config();
  early.patch_tap_layers = {1, 4};
  early.vv_start_depth = 2;
  RunConfig late = early;
  late.vv_start_depth = 4;
  const Image img = random_image(32, 5);
  const VisualFeatures a = encode_image(*toy().vision, img, early);
  const VisualFeatures b = encode_image(*toy().vision, img, late);
  CHECK(a.patch_grids[0] == b.patch_grids[0]);
  CHECK((a.patch_grids[1] - b.patch_grids[1]).norm() > 1e-6);
}

TEST_CASE("bad inputs") {
  const RunConfig cfg = toy_run_config();
  try {
    encode_image(*toy().vision, random_image(24, 1), cfg);
    FAIL("expected resolution error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kShapeMismatch);
  }
  Image img = random_image(32, 1);
  img.at(3, 3, 1) = std::nan("");
  CHECK_THROWS_AS(encode_image(*toy().vision, img, cfg), Error);
}

TEST_CASE("archive round trip keeps the checksum and outputs") {
  TempDir dir;
  ArrayArchive ar;
  toy().vision->to_archive(ar);
  ar.save(dir.path() / "v.npz");
  const VisionTower back = VisionTower::from_archive(ArrayArchive::load(dir.path() / "v.npz"));
  CHECK(back.checksum() == toy().vision->checksum());
  CHECK(back.layers() == 4);
  CHECK(back.patch_size() == 8);
  CHECK(back.embed_dim() == 32);
  const RunConfig cfg = toy_run_config();
  const Image img = random_image(32, 9);
  CHECK(encode_image(back, img, cfg).global_embedding ==
        encode_image(*toy().vision, img, cfg).global_embedding);
}

TEST_CASE("full backbone archive") {
  TempDir dir;
  save_backbone_archive(toy(), dir.path() / "b.npz");
  const Towers back = load_backbone("archive:" + (dir.path() / "b.npz").string());
  CHECK(back.text->checksum() == toy().text->checksum());
  CHECK(back.vision->checksum() == toy().vision->checksum());
  CHECK(back.temperature == doctest::Approx(toy().temperature).epsilon(1e-12));
  CHECK(back.limits().text_layers == 2);
  CHECK(back.limits().vision_layers == 4);
  CHECK_THROWS_AS(load_backbone("nonsense"), Error);
}
