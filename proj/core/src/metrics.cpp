#include "glocal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "glocal/error.hpp"

namespace glocal {
namespace {

void require_same_length(std::span<const double> scores, std::span<const int> labels,
                         const char* what) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorKind::kShapeMismatch,
                std::string(what) + ": scores and labels differ in length");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) {
      throw Error(ErrorKind::kNumerical, std::string(what) + ": non-finite score");
    }
  }
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::optional<double> mean_of(const std::vector<ClassMetrics>& rows,
                              std::optional<double> ClassMetrics::*field) {
  double acc = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.*field) {
      acc += *(r.*field);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return acc / n;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  require_same_length(scores, labels, "auroc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mid-ranks (1-based) for tie groups.
  double positive_rank_sum = 0.0;
  double positives = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        positive_rank_sum += mid_rank;
        positives += 1.0;
      }
    }
    i = j;
  }
  const double negatives = static_cast<double>(n) - positives;
  if (positives == 0.0 || negatives == 0.0) {
    throw Error(ErrorKind::kInvalidArgument, "auroc: both classes must be present");
  }
  return (positive_rank_sum - positives * (positives + 1.0) / 2.0) /
         (positives * negatives);
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  require_same_length(scores, labels, "average_precision");
  const double positives =
      static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0.0) {
    throw Error(ErrorKind::kInvalidArgument, "average_precision: no positives");
  }
  const auto order = descending_order(scores);
  double tp = 0.0;
  double fp = 0.0;
  double prev_recall = 0.0;
  double ap = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    i = j;
  }
  return ap;
}

Eigen::MatrixXi connected_components(const Eigen::MatrixXd& mask, int* count) {
  const Eigen::Index h = mask.rows();
  const Eigen::Index w = mask.cols();
  Eigen::MatrixXi labels = Eigen::MatrixXi::Zero(h, w);
  int next = 0;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> stack;
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      if (mask(y, x) <= 0.5 || labels(y, x) != 0) continue;
      labels(y, x) = ++next;
      stack.assign(1, {y, x});
      while (!stack.empty()) {
        const auto [cy, cx] = stack.back();
        stack.pop_back();
        for (Eigen::Index dy = -1; dy <= 1; ++dy) {
          for (Eigen::Index dx = -1; dx <= 1; ++dx) {
            const Eigen::Index ny = cy + dy;
            const Eigen::Index nx = cx + dx;
            if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
            if (mask(ny, nx) <= 0.5 || labels(ny, nx) != 0) continue;
            labels(ny, nx) = next;
            stack.emplace_back(ny, nx);
          }
        }
      }
    }
  }
  if (count != nullptr) *count = next;
  return labels;
}

double aupro(const std::vector<Eigen::MatrixXd>& maps,
             const std::vector<Eigen::MatrixXd>& masks, double fpr_cap) {
  if (maps.size() != masks.size()) {
    throw Error(ErrorKind::kShapeMismatch, "aupro: maps and masks differ in count");
  }
  if (!(fpr_cap > 0.0 && fpr_cap <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "aupro: fpr_cap must lie in (0, 1]");
  }
  struct Pixel {
    double value;
    int region;   // -1 for normal pixels
    double area;  // of the region, 0 for normal pixels
  };
  std::vector<Pixel> pixels;
  std::vector<double> region_area;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].rows() != masks[i].rows() || maps[i].cols() != masks[i].cols()) {
      throw Error(ErrorKind::kShapeMismatch, "aupro: map/mask shape mismatch");
    }
    if (!maps[i].allFinite()) {
      throw Error(ErrorKind::kNumerical, "aupro: non-finite map value");
    }
    int count = 0;
    const Eigen::MatrixXi cc = connected_components(masks[i], &count);
    const int offset = static_cast<int>(region_area.size());
    region_area.resize(region_area.size() + count, 0.0);
    for (Eigen::Index k = 0; k < cc.size(); ++k) {
      const int region = cc(k) == 0 ? -1 : offset + cc(k) - 1;
      if (region >= 0) region_area[region] += 1.0;
      pixels.push_back({maps[i](k), region, 0.0});
    }
  }
  if (region_area.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "aupro: no anomalous pixels");
  }
  const double normals = static_cast<double>(
      std::count_if(pixels.begin(), pixels.end(), [](const Pixel& p) { return p.region < 0; }));
  const double regions = static_cast<double>(region_area.size());
  for (auto& p : pixels) {
    if (p.region >= 0) p.area = region_area[p.region];
  }
  // Within a tie group the overlap increments are summed in area order, which
  // keeps the result independent of the order of the input images.
  std::sort(pixels.begin(), pixels.end(), [](const Pixel& a, const Pixel& b) {
    if (a.value != b.value) return a.value > b.value;
    return a.area < b.area;
  });

  double area = 0.0;
  double prev_fpr = 0.0;
  double prev_pro = 0.0;
  double fp = 0.0;
  double overlap_sum = 0.0;
  std::size_t i = 0;
  while (i < pixels.size()) {
    std::size_t j = i;
    while (j < pixels.size() && pixels[j].value == pixels[i].value) {
      if (pixels[j].region < 0) {
        fp += 1.0;
      } else {
        overlap_sum += 1.0 / pixels[j].area;
      }
      ++j;
    }
    i = j;
    const double fpr = normals > 0.0 ? fp / normals : 0.0;
    const double pro = overlap_sum / regions;
    if (fpr >= fpr_cap) {
      const double t = fpr > prev_fpr ? (fpr_cap - prev_fpr) / (fpr - prev_fpr) : 0.0;
      const double pro_at_cap = prev_pro + t * (pro - prev_pro);
      area += 0.5 * (fpr_cap - prev_fpr) * (prev_pro + pro_at_cap);
      return std::clamp(area / fpr_cap, 0.0, 1.0);
    }
    area += 0.5 * (fpr - prev_fpr) * (prev_pro + pro);
    prev_fpr = fpr;
    prev_pro = pro;
  }
  // Only reached without normal pixels: the curve never leaves fpr 0, so
  // extend it flat at the final overlap.
  area += (fpr_cap - prev_fpr) * prev_pro;
  return std::clamp(area / fpr_cap, 0.0, 1.0);
}

EvalReport build_report(const std::vector<ScoredSample>& samples, double fpr_cap) {
  std::map<std::string, std::vector<const ScoredSample*>> by_class;
  for (const auto& s : samples) by_class[s.class_name].push_back(&s);

  EvalReport report;
  report.samples = samples.size();
  for (const auto& [name, members] : by_class) {
    ClassMetrics row;
    row.class_name = name;
    row.samples = members.size();

    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto* s : members) {
      scores.push_back(s->score);
      labels.push_back(s->label);
    }
    const bool both = std::count(labels.begin(), labels.end(), 1) > 0 &&
                      std::count(labels.begin(), labels.end(), 0) > 0;
    if (both) {
      row.image_auroc = auroc(scores, labels);
      row.image_ap = average_precision(scores, labels);
    }

    std::vector<double> pixel_scores;
    std::vector<int> pixel_labels;
    std::vector<Eigen::MatrixXd> maps;
    std::vector<Eigen::MatrixXd> masks;
    for (const auto* s : members) {
      if (!s->has_mask || s->map.size() == 0) continue;
      for (Eigen::Index k = 0; k < s->map.size(); ++k) {
        pixel_scores.push_back(s->map(k));
        pixel_labels.push_back(s->mask(k) > 0.5 ? 1 : 0);
      }
      maps.push_back(s->map);
      masks.push_back(s->mask);
    }
    const auto pos = std::count(pixel_labels.begin(), pixel_labels.end(), 1);
    const auto neg = static_cast<std::ptrdiff_t>(pixel_labels.size()) - pos;
    if (pos > 0 && neg > 0) {
      row.pixel_auroc = auroc(pixel_scores, pixel_labels);
      row.pixel_aupro = aupro(maps, masks, fpr_cap);
    }
    report.per_class.push_back(std::move(row));
  }
  report.image_auroc = mean_of(report.per_class, &ClassMetrics::image_auroc);
  report.image_ap = mean_of(report.per_class, &ClassMetrics::image_ap);
  report.pixel_auroc = mean_of(report.per_class, &ClassMetrics::pixel_auroc);
  report.pixel_aupro = mean_of(report.per_class, &ClassMetrics::pixel_aupro);
  return report;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string percent(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * *v);
  return buf;
}

}  // namespace

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& r : report.per_class) {
    classes.push_back({{"class", r.class_name},
                       {"samples", r.samples},
                       {"image_auroc", optional_json(r.image_auroc)},
                       {"image_ap", optional_json(r.image_ap)},
                       {"pixel_auroc", optional_json(r.pixel_auroc)},
                       {"pixel_aupro", optional_json(r.pixel_aupro)}});
  }
  return {{"samples", report.samples},
          {"image_auroc", optional_json(report.image_auroc)},
          {"image_ap", optional_json(report.image_ap)},
          {"pixel_auroc", optional_json(report.pixel_auroc)},
          {"pixel_aupro", optional_json(report.pixel_aupro)},
          {"per_class", classes}};
}

std::string to_table(const EvalReport& report) {
  std::size_t width = 5;
  for (const auto& r : report.per_class) width = std::max(width, r.class_name.size());
  std::ostringstream out;
  auto line = [&](const std::string& name, const std::string& ia, const std::string& ap,
                  const std::string& pa, const std::string& pro) {
    out << name << std::string(width - name.size() + 2, ' ') << "(" << ia << ", " << ap
        << ")  (" << pa << ", " << pro << ")\n";
  };
  out << std::string(width + 2, ' ') << "image (AUROC, AP)  pixel (AUROC, PRO)\n";
  for (const auto& r : report.per_class) {
    line(r.class_name, percent(r.image_auroc), percent(r.image_ap), percent(r.pixel_auroc),
         percent(r.pixel_aupro));
  }
  line("mean", percent(report.image_auroc), percent(report.image_ap),
       percent(report.pixel_auroc), percent(report.pixel_aupro));
  out << "samples: " << report.samples << "\n";
  return out.str();
}

}  // namespace glocal
