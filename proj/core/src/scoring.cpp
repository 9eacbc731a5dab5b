#include "glocal/scoring.hpp"

#include <cmath>

#include "glocal/error.hpp"
#include "glocal/image.hpp"

namespace glocal {
namespace {

std::pair<double, double> softmax2(double a, double b) {
  const double m = std::max(a, b);
  const double ea = std::exp(a - m);
  const double eb = std::exp(b - m);
  return {ea / (ea + eb), eb / (ea + eb)};
}

int reflect_index(int i, int n) {
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace

ClassProbability class_probability(const Eigen::VectorXd& text_normal,
                                   const Eigen::VectorXd& text_anomaly,
                                   const Eigen::VectorXd& feature, double tau) {
  if (!(tau > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "class_probability: tau must be > 0");
  }
  if (text_normal.size() != feature.size() || text_anomaly.size() != feature.size()) {
    throw Error(ErrorKind::kShapeMismatch, "class_probability: dimension mismatch");
  }
  const double nn = text_normal.norm();
  const double na = text_anomaly.norm();
  const double nf = feature.norm();
  if (!(nn > 0.0) || !(na > 0.0) || !(nf > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "class_probability: zero-norm input");
  }
  const double sim_n = text_normal.dot(feature) / (nn * nf);
  const double sim_a = text_anomaly.dot(feature) / (na * nf);
  const auto [pn, pa] = softmax2(sim_n / tau, sim_a / tau);
  return {pn, pa};
}

SimilarityMaps local_similarity_maps(const Eigen::VectorXd& local_normal,
                                     const Eigen::VectorXd& local_anomaly,
                                     const Eigen::MatrixXd& grid, int grid_h,
                                     int grid_w, double tau) {
  if (grid.cols() != local_normal.size() || grid.cols() != local_anomaly.size()) {
    throw Error(ErrorKind::kShapeMismatch,
                "local_similarity_maps: prompt and grid depth differ");
  }
  if (grid.rows() != static_cast<Eigen::Index>(grid_h) * grid_w) {
    throw Error(ErrorKind::kShapeMismatch, "local_similarity_maps: bad grid size");
  }
  SimilarityMaps out{Eigen::MatrixXd(grid_h, grid_w), Eigen::MatrixXd(grid_h, grid_w)};
  for (int j = 0; j < grid_h; ++j) {
    for (int k = 0; k < grid_w; ++k) {
      const auto p = class_probability(local_normal, local_anomaly,
                                       grid.row(j * grid_w + k).transpose(), tau);
      out.normal(j, k) = p.normal;
      out.anomaly(j, k) = p.anomaly;
    }
  }
  return out;
}

Eigen::MatrixXd upsample(const Eigen::MatrixXd& m, int height, int width) {
  if (height < m.rows() || width < m.cols()) {
    throw Error(ErrorKind::kInvalidArgument, "upsample: downscaling requested");
  }
  return resize_bilinear(m, height, width);
}

Eigen::VectorXd gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "gaussian_kernel: sigma must be > 0");
  }
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  Eigen::VectorXd k(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) {
    k(i + radius) = std::exp(-0.5 * (i * i) / (sigma * sigma));
  }
  return k / k.sum();
}

Eigen::MatrixXd gaussian_filter(const Eigen::MatrixXd& m, double sigma) {
  const Eigen::VectorXd k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const int h = static_cast<int>(m.rows());
  const int w = static_cast<int>(m.cols());

  Eigen::MatrixXd tmp = Eigen::MatrixXd::Zero(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        acc += k(t + radius) * m(y, reflect_index(x - t, w));
      }
      tmp(y, x) = acc;
    }
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        acc += k(t + radius) * tmp(reflect_index(y - t, h), x);
      }
      out(y, x) = acc;
    }
  }
  return out;
}

Eigen::MatrixXd anomaly_map(const std::vector<SimilarityMaps>& per_layer,
                            int height, int width, double sigma,
                            bool normalize_by_layers) {
  if (per_layer.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "anomaly_map: empty layer list");
  }
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(height, width);
  for (const auto& layer : per_layer) {
    const Eigen::MatrixXd up_n = upsample(layer.normal, height, width);
    const Eigen::MatrixXd up_a = upsample(layer.anomaly, height, width);
    total += 0.5 * (1.0 - up_n.array()).matrix() + 0.5 * up_a;
  }
  if (normalize_by_layers) total /= static_cast<double>(per_layer.size());
  return gaussian_filter(total, sigma);
}

double image_score(double global_anomaly_probability, const AnomalyMap& map,
                   ScoreFusion fusion) {
  if (fusion == ScoreFusion::kTextOnly) return global_anomaly_probability;
  const double peak = map.map.size() > 0 ? map.map.maxCoeff() : 0.0;
  return 0.5 * global_anomaly_probability + 0.5 * peak / map.map_normalizer;
}

AnomalyMap score_image(const GlocalTextEmbeddings& text,
                       const VisualFeatures& features, const RunConfig& cfg,
                       double tau, double* global_anomaly_probability) {
  AnomalyMap out;
  for (const auto& grid : features.patch_grids) {
    out.per_layer_maps.push_back(local_similarity_maps(
        text.local_normal, text.local_anomaly, grid, features.grid_height,
        features.grid_width, tau));
  }
  const auto [h, w] = cfg.image_resolution;
  out.map = anomaly_map(out.per_layer_maps, h, w, cfg.sigma,
                        cfg.normalize_map_by_layers);
  out.map_normalizer = cfg.normalize_map_by_layers
                           ? 1.0
                           : static_cast<double>(out.per_layer_maps.size());
  const double pa = class_probability(text.global_normal, text.global_anomaly,
                                      features.global_embedding, tau)
                        .anomaly;
  if (global_anomaly_probability != nullptr) *global_anomaly_probability = pa;
  out.image_score = image_score(pa, out, cfg.score_fusion);
  return out;
}

namespace graph {

ad::Var class_probabilities(const ad::Var& text_pair,
                            const Eigen::MatrixXd& features, double tau) {
  ad::Var sims = ad::matmul_transposed(ad::constant(features), text_pair);
  return ad::softmax_rows(ad::scale(sims, 1.0 / tau));
}

ad::Var upsample(const ad::Var& m, int height, int width) {
  if (height < m.rows() || width < m.cols()) {
    throw Error(ErrorKind::kInvalidArgument, "upsample: downscaling requested");
  }
  if (height == m.rows() && width == m.cols()) return m;
  const ad::Var ry = ad::constant(
      bilinear_axis_operator(static_cast<int>(m.rows()), height));
  const ad::Var rx = ad::constant(
      bilinear_axis_operator(static_cast<int>(m.cols()), width));
  return ad::matmul_transposed(ad::matmul(ry, m), rx);
}

}  // namespace graph
}  // namespace glocal
