#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <functional>
#include <random>
#include <vector>

#include "glocal/autodiff.hpp"

namespace gradcheck {

using Matrix = Eigen::MatrixXd;

inline Matrix uniform(int rows, int cols, std::mt19937_64& rng, double lo = -1.0,
                      double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = d(rng);
  return m;
}

inline Matrix unit_rows(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = d(rng);
  return m.rowwise().normalized();
}

// ||a - b|| / max(||a||, ||b||, floor). The floor keeps a vanishing gradient
// from turning rounding noise into a large relative error.
inline double relative_error(const Matrix& a, const Matrix& b, double floor = 1e-8) {
  const double scale = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / scale;
}

// Analytic gradients of f at `inputs` (one per input) via the tape.
using GraphFn = std::function<glocal::ad::Var(const std::vector<glocal::ad::Var>&)>;

inline std::vector<Matrix> analytic(const GraphFn& f, const std::vector<Matrix>& inputs) {
  std::vector<glocal::ad::Var> vars;
  for (const auto& m : inputs) vars.push_back(glocal::ad::parameter(m));
  glocal::ad::backward(f(vars));
  std::vector<Matrix> grads;
  for (const auto& v : vars) grads.push_back(v.grad());
  return grads;
}

// Central differences of the same graph evaluated on constants.
inline std::vector<Matrix> numeric(const GraphFn& f, const std::vector<Matrix>& inputs,
                                   double h = 1e-5) {
  auto eval = [&](const std::vector<Matrix>& xs) {
    std::vector<glocal::ad::Var> vars;
    for (const auto& m : xs) vars.push_back(glocal::ad::constant(m));
    return f(vars).scalar();
  };
  std::vector<Matrix> grads;
  std::vector<Matrix> xs = inputs;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    Matrix g(xs[k].rows(), xs[k].cols());
    for (Eigen::Index i = 0; i < xs[k].size(); ++i) {
      const double orig = xs[k](i);
      xs[k](i) = orig + h;
      const double up = eval(xs);
      xs[k](i) = orig - h;
      const double down = eval(xs);
      xs[k](i) = orig;
      g(i) = (up - down) / (2 * h);
    }
    grads.push_back(g);
  }
  return grads;
}

// Worst relative error over all inputs.
inline double check(const GraphFn& f, const std::vector<Matrix>& inputs, double h = 1e-5) {
  const auto a = analytic(f, inputs);
  const auto n = numeric(f, inputs, h);
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, relative_error(a[k], n[k]));
  return worst;
}

}  // namespace gradcheck
