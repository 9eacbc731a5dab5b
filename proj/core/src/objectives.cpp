#include "glocal/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "glocal/error.hpp"
#include "glocal/scoring.hpp"

namespace glocal {
namespace {

void require_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                        const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::kShapeMismatch, std::string(what) + ": shape mismatch");
  }
}

}  // namespace

double global_loss(double anomaly_probability, int label) {
  const double p =
      std::clamp(anomaly_probability, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

double focal_loss(const Eigen::MatrixXd& prob_normal,
                  const Eigen::MatrixXd& prob_anomaly,
                  const Eigen::MatrixXd& mask, const FocalParams& params) {
  require_same_shape(prob_normal, mask, "focal_loss");
  require_same_shape(prob_anomaly, mask, "focal_loss");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    const double pt = std::clamp(mask(i) > 0.5 ? prob_anomaly(i) : prob_normal(i),
                                 kProbabilityClamp, 1.0);
    acc += -params.alpha * std::pow(1.0 - pt, params.gamma) * std::log(pt);
  }
  return acc / static_cast<double>(mask.size());
}

double dice_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target,
                 double eps) {
  require_same_shape(pred, target, "dice_loss");
  const double inter = pred.cwiseProduct(target).sum();
  return 1.0 - (2.0 * inter + eps) / (pred.sum() + target.sum() + eps);
}

double local_loss(const Eigen::MatrixXd& sim_normal,
                  const Eigen::MatrixXd& sim_anomaly,
                  const Eigen::MatrixXd& mask, const FocalParams& params,
                  double dice_eps) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  const Eigen::MatrixXd up_n = upsample(sim_normal, h, w);
  const Eigen::MatrixXd up_a = upsample(sim_anomaly, h, w);
  const Eigen::MatrixXd complement = (1.0 - mask.array()).matrix();
  return focal_loss(up_n, up_a, mask, params) +
         dice_loss(up_n, complement, dice_eps) + dice_loss(up_a, mask, dice_eps);
}

double gcl_triplet(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                   const Eigen::VectorXd& negative, double margin) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
    throw Error(ErrorKind::kShapeMismatch, "gcl_triplet: dimension mismatch");
  }
  const double pull = (anchor - positive).squaredNorm();
  const double hinge = std::max(0.0, margin - (anchor - negative).norm());
  return pull + hinge * hinge;
}

double gcl_total(const GlocalTextEmbeddings& emb, double margin) {
  return gcl_triplet(emb.global_normal, emb.local_normal, emb.local_anomaly, margin) +
         gcl_triplet(emb.global_anomaly, emb.local_anomaly, emb.local_normal, margin);
}

LossReport total_loss(double global, const std::vector<double>& per_layer_local,
                      double gcl, double lambda) {
  LossReport r;
  r.global = global;
  r.per_layer_local = per_layer_local;
  r.gcl = gcl;
  bool finite = std::isfinite(global) && std::isfinite(gcl);
  for (double v : per_layer_local) {
    finite = finite && std::isfinite(v);
    r.local += v;
  }
  if (!finite) {
    throw Error(ErrorKind::kNumerical, "total_loss: non-finite component");
  }
  r.total = global + r.local + lambda * gcl;
  return r;
}

namespace graph {

ad::Var global_loss(const ad::Var& anomaly_probability,
                    const Eigen::VectorXd& labels) {
  if (anomaly_probability.cols() != 1 || anomaly_probability.rows() != labels.size()) {
    throw Error(ErrorKind::kShapeMismatch, "global_loss: expected one p per label");
  }
  ad::Var p = ad::clamp(anomaly_probability, kProbabilityClamp, 1.0 - kProbabilityClamp);
  ad::Var y = ad::constant(labels);
  ad::Var one_minus_y = ad::constant((1.0 - labels.array()).matrix());
  ad::Var ll = ad::add(ad::mul(y, ad::log(p)),
                       ad::mul(one_minus_y, ad::log(ad::add_scalar(ad::scale(p, -1.0), 1.0))));
  return ad::scale(ad::mean(ll), -1.0);
}

ad::Var focal_loss(const ad::Var& prob_normal, const ad::Var& prob_anomaly,
                   const Eigen::MatrixXd& mask, const FocalParams& params) {
  const Eigen::MatrixXd is_anomaly = (mask.array() > 0.5).cast<double>().matrix();
  ad::Var pt = ad::add(ad::mul(prob_anomaly, ad::constant(is_anomaly)),
                       ad::mul(prob_normal, ad::constant((1.0 - is_anomaly.array()).matrix())));
  pt = ad::clamp(pt, kProbabilityClamp, 1.0);
  ad::Var weight = ad::pow(ad::add_scalar(ad::scale(pt, -1.0), 1.0), params.gamma);
  return ad::scale(ad::mean(ad::mul(weight, ad::log(pt))), -params.alpha);
}

ad::Var dice_loss(const ad::Var& pred, const Eigen::MatrixXd& target, double eps) {
  ad::Var inter = ad::sum(ad::mul(pred, ad::constant(target)));
  ad::Var num = ad::add_scalar(ad::scale(inter, 2.0), eps);
  ad::Var den = ad::add_scalar(ad::sum(pred), target.sum() + eps);
  // 1 - num / den, with the quotient written as num * den^-1.
  return ad::add_scalar(ad::scale(ad::mul(num, ad::pow(den, -1.0)), -1.0), 1.0);
}

ad::Var local_loss(const ad::Var& sim_normal, const ad::Var& sim_anomaly,
                   const Eigen::MatrixXd& mask, const FocalParams& params,
                   double dice_eps) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  ad::Var up_n = glocal::graph::upsample(sim_normal, h, w);
  ad::Var up_a = glocal::graph::upsample(sim_anomaly, h, w);
  const Eigen::MatrixXd complement = (1.0 - mask.array()).matrix();
  return ad::add(ad::add(focal_loss(up_n, up_a, mask, params),
                         dice_loss(up_n, complement, dice_eps)),
                 dice_loss(up_a, mask, dice_eps));
}

ad::Var gcl_triplet(const ad::Var& anchor, const ad::Var& positive,
                    const ad::Var& negative, double margin) {
  ad::Var pull = ad::sum(ad::square(ad::sub(anchor, positive)));
  ad::Var dist = ad::sqrt(ad::sum(ad::square(ad::sub(anchor, negative))));
  ad::Var hinge = ad::relu(ad::add_scalar(ad::scale(dist, -1.0), margin));
  return ad::add(pull, ad::square(hinge));
}

ad::Var gcl_total(const ad::Var& rows4, double margin) {
  ad::Var gn = ad::rows(rows4, 0, 1);
  ad::Var ga = ad::rows(rows4, 1, 1);
  ad::Var ln = ad::rows(rows4, 2, 1);
  ad::Var la = ad::rows(rows4, 3, 1);
  return ad::add(gcl_triplet(gn, ln, la, margin), gcl_triplet(ga, la, ln, margin));
}

}  // namespace graph
}  // namespace glocal
