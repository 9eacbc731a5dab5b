#pragma once

#include <Eigen/Dense>

#include <vector>

#include "glocal/autodiff.hpp"
#include "glocal/runtime_config.hpp"
#include "glocal/text_tower.hpp"
#include "glocal/vision_tower.hpp"

namespace glocal {

struct ClassProbability {
  double normal = 0.5;
  double anomaly = 0.5;
};

// Softmax over cosine similarities scaled by 1/tau.
ClassProbability class_probability(const Eigen::VectorXd& text_normal,
                                   const Eigen::VectorXd& text_anomaly,
                                   const Eigen::VectorXd& feature, double tau);

struct SimilarityMaps {
  Eigen::MatrixXd normal;   // S_n, grid resolution
  Eigen::MatrixXd anomaly;  // S_a
};

// `grid` is (grid_h * grid_w) x D with row-major positions.
SimilarityMaps local_similarity_maps(const Eigen::VectorXd& local_normal,
                                     const Eigen::VectorXd& local_anomaly,
                                     const Eigen::MatrixXd& grid, int grid_h,
                                     int grid_w, double tau);

// Bilinear, corner alignment off. Throws when asked to shrink.
Eigen::MatrixXd upsample(const Eigen::MatrixXd& m, int height, int width);

// Unit-sum kernel with radius ceil(3 sigma).
Eigen::VectorXd gaussian_kernel(double sigma);
// Separable Gaussian smoothing with half-sample symmetric reflection.
Eigen::MatrixXd gaussian_filter(const Eigen::MatrixXd& m, double sigma);

// G_sigma( sum_k 0.5 * (1 - Up(S_n,k)) + 0.5 * Up(S_a,k) ), optionally divided
// by the number of layers.
Eigen::MatrixXd anomaly_map(const std::vector<SimilarityMaps>& per_layer,
                            int height, int width, double sigma,
                            bool normalize_by_layers = false);

struct AnomalyMap {
  Eigen::MatrixXd map;
  double image_score = 0.0;
  std::vector<SimilarityMaps> per_layer_maps;
  // Largest value the map can take: the layer count, or 1 when normalized.
  double map_normalizer = 1.0;
};

double image_score(double global_anomaly_probability, const AnomalyMap& map,
                   ScoreFusion fusion);

// Full inference for one image's features.
AnomalyMap score_image(const GlocalTextEmbeddings& text,
                       const VisualFeatures& features, const RunConfig& cfg,
                       double tau, double* global_anomaly_probability = nullptr);

namespace graph {

// n x 2 probabilities (normal, anomaly) for each row of `features` against
// the two unit text rows of `text_pair`.
ad::Var class_probabilities(const ad::Var& text_pair,
                            const Eigen::MatrixXd& features, double tau);

// Up(m) = R_y m R_x^T as a differentiable op.
ad::Var upsample(const ad::Var& m, int height, int width);

}  // namespace graph
}  // namespace glocal
