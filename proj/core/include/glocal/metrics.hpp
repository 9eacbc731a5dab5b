#pragma once

#include <Eigen/Dense>

#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace glocal {

// Mann-Whitney: P(s+ > s-) + 0.5 P(s+ == s-). Needs both classes.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Sum over descending score thresholds (ties grouped) of
// (recall step) * precision. Needs at least one positive.
double average_precision(std::span<const double> scores, std::span<const int> labels);

// Per-region overlap vs. false-positive rate, regions being 8-connected
// components of each mask; integrated trapezoidally up to `fpr_cap` and
// divided by it.
double aupro(const std::vector<Eigen::MatrixXd>& maps,
             const std::vector<Eigen::MatrixXd>& masks, double fpr_cap = 0.3);

// 8-connected component labels (0 = background, regions 1..count).
Eigen::MatrixXi connected_components(const Eigen::MatrixXd& mask, int* count = nullptr);

struct ClassMetrics {
  std::string class_name;
  std::size_t samples = 0;
  std::optional<double> image_auroc;
  std::optional<double> image_ap;
  std::optional<double> pixel_auroc;
  std::optional<double> pixel_aupro;
};

struct EvalReport {
  std::vector<ClassMetrics> per_class;
  // Unweighted means over the classes where each metric is present.
  std::optional<double> image_auroc;
  std::optional<double> image_ap;
  std::optional<double> pixel_auroc;
  std::optional<double> pixel_aupro;
  std::size_t samples = 0;
};

struct ScoredSample {
  std::string class_name;
  int label = 0;
  double score = 0.0;
  Eigen::MatrixXd map;
  Eigen::MatrixXd mask;
  bool has_mask = true;
};

// Metrics per class (pixel metrics pool all pixels of the class), then means.
// Metrics whose preconditions fail for a class are left absent.
EvalReport build_report(const std::vector<ScoredSample>& samples, double fpr_cap);

nlohmann::json to_json(const EvalReport& report);
// Rows of (AUROC, AP) image-level and (AUROC, PRO) pixel-level in percent.
std::string to_table(const EvalReport& report);

}  // namespace glocal
