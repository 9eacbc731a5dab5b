#pragma once

// Minimal reverse-mode automatic differentiation over dense float64 matrices.
//
// Every op records its parents and a backward closure only when at least one
// parent requires a gradient, so graphs built purely from constants cost no
// more than the plain Eigen expressions (frozen forward passes run through
// the same code with no tape retained).

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace glocal::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  // Zero matrix of the value's shape when no gradient reached this node.
  Matrix grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  bool valid() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Matrix value);
Var parameter(Matrix value);

// Seeds d(loss)/d(loss) = 1 and propagates to every reachable parameter.
// `loss` must be 1x1.
void backward(const Var& loss);

// Arithmetic.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // element-wise
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
Var matmul_transposed(const Var& a, const Var& b);  // a * b^T
Var transpose(const Var& a);
Var add_row_broadcast(const Var& x, const Var& row);  // x + 1 * row

// Element-wise functions.
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);  // gradient taken as 0 where the value is 0
Var square(const Var& a);
Var pow(const Var& a, double exponent);
Var relu(const Var& a);
// Values outside [lo, hi] are clamped and pass no gradient.
Var clamp(const Var& a, double lo, double hi);
Var quick_gelu(const Var& a);
Var gelu(const Var& a);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
Var row_sums(const Var& a);  // rows x 1

// Structure.
Var rows(const Var& a, Index start, Index count);
Var cols(const Var& a, Index start, Index count);
Var concat_rows(std::span<const Var> parts);
// Reads column `col` of `a` (length h*w) as an h x w grid in row-major order.
Var column_as_grid(const Var& a, Index col, Index h, Index w);

// Row-wise normalizations.
Var softmax_rows(const Var& a);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                    double eps);
Var l2_normalize_rows(const Var& a);

// Multi-head scaled dot-product attention over already projected q, k, v
// (each n x width, heads split along columns). With `causal`, position i
// attends only to positions <= i.
Var multi_head_attention(const Var& q, const Var& k, const Var& v, int heads,
                         bool causal);

}  // namespace glocal::ad
