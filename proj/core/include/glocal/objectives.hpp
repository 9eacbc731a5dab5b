#pragma once

#include <Eigen/Dense>

#include <vector>

#include "glocal/autodiff.hpp"
#include "glocal/text_tower.hpp"

namespace glocal {

inline constexpr double kProbabilityClamp = 1e-7;

struct FocalParams {
  double gamma = 2.0;
  double alpha = 1.0;
};

struct LossReport {
  double global = 0.0;
  double local = 0.0;  // sum of per_layer_local
  double gcl = 0.0;
  double total = 0.0;
  std::vector<double> per_layer_local;
};

// Binary cross-entropy with p clamped to [1e-7, 1 - 1e-7].
double global_loss(double anomaly_probability, int label);

// Mean over pixels of -alpha (1 - p_t)^gamma ln p_t, where p_t is the
// probability of the true class (mask 1 -> anomaly channel).
double focal_loss(const Eigen::MatrixXd& prob_normal,
                  const Eigen::MatrixXd& prob_anomaly,
                  const Eigen::MatrixXd& mask, const FocalParams& params = {});

// 1 - (2 sum(pred*target) + eps) / (sum(pred) + sum(target) + eps).
double dice_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target,
                 double eps = 1e-5);

// Focal(Up([S_n, S_a]), S) + Dice(Up(S_n), 1 - S) + Dice(Up(S_a), S), with
// Up to the mask's resolution.
double local_loss(const Eigen::MatrixXd& sim_normal,
                  const Eigen::MatrixXd& sim_anomaly,
                  const Eigen::MatrixXd& mask, const FocalParams& params = {},
                  double dice_eps = 1e-5);

// ||a - p||^2 + max(0, margin - ||a - n||)^2
double gcl_triplet(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                   const Eigen::VectorXd& negative, double margin);

// Global prompts anchor their local counterparts; the opposite-polarity
// local prompt is the negative.
double gcl_total(const GlocalTextEmbeddings& emb, double margin);

LossReport total_loss(double global, const std::vector<double>& per_layer_local,
                      double gcl, double lambda);

namespace graph {

// Mean binary cross-entropy over a column of anomaly probabilities.
ad::Var global_loss(const ad::Var& anomaly_probability,
                    const Eigen::VectorXd& labels);
ad::Var focal_loss(const ad::Var& prob_normal, const ad::Var& prob_anomaly,
                   const Eigen::MatrixXd& mask, const FocalParams& params);
ad::Var dice_loss(const ad::Var& pred, const Eigen::MatrixXd& target, double eps);
ad::Var local_loss(const ad::Var& sim_normal, const ad::Var& sim_anomaly,
                   const Eigen::MatrixXd& mask, const FocalParams& params,
                   double dice_eps);
// Rows of 1 x D vectors.
ad::Var gcl_triplet(const ad::Var& anchor, const ad::Var& positive,
                    const ad::Var& negative, double margin);
// `rows4` holds g_n, g_a, l_n, l_a.
ad::Var gcl_total(const ad::Var& rows4, double margin);

}  // namespace graph
}  // namespace glocal
