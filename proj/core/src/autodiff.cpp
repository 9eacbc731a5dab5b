#include "glocal/autodiff.hpp"

#include <cmath>
#include <limits>
#include <unordered_set>

#include "glocal/error.hpp"

namespace glocal::ad {
namespace {

using Parents = std::vector<std::shared_ptr<Node>>;

void accumulate(Node& node, const Matrix& g) {
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

// Builds an op node. The closure is dropped when no parent needs a gradient.
Var make_op(Matrix value, Parents parents, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(fn);
  }
  return Var(std::move(node));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::kShapeMismatch,
                std::string(op) + ": operand shapes differ");
  }
}

Matrix sigmoid(const Matrix& x) {
  return (1.0 + (-x.array()).exp()).inverse().matrix();
}

}  // namespace

Matrix Var::grad() const {
  if (node_->grad.size() == 0) {
    return Matrix::Zero(node_->value.rows(), node_->value.cols());
  }
  return node_->grad;
}

Var constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw Error(ErrorKind::kInvalidArgument, "backward: loss must be 1x1");
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.contains(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad = Matrix::Ones(1, 1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() != 0) node->backward(*node);
  }
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_op(a.value() + b.value(), {a.node(), b.node()}, [](Node& n) {
    accumulate(*n.parents[0], n.grad);
    accumulate(*n.parents[1], n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_op(a.value() - b.value(), {a.node(), b.node()}, [](Node& n) {
    accumulate(*n.parents[0], n.grad);
    accumulate(*n.parents[1], -n.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make_op(a.value().cwiseProduct(b.value()), {a.node(), b.node()},
                 [](Node& n) {
                   auto& pa = *n.parents[0];
                   auto& pb = *n.parents[1];
                   accumulate(pa, n.grad.cwiseProduct(pb.value));
                   accumulate(pb, n.grad.cwiseProduct(pa.value));
                 });
}

Var scale(const Var& a, double s) {
  return make_op(a.value() * s, {a.node()},
                 [s](Node& n) { accumulate(*n.parents[0], n.grad * s); });
}

Var add_scalar(const Var& a, double s) {
  return make_op((a.value().array() + s).matrix(), {a.node()},
                 [](Node& n) { accumulate(*n.parents[0], n.grad); });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorKind::kShapeMismatch, "matmul: inner dimensions differ");
  }
  return make_op(a.value() * b.value(), {a.node(), b.node()}, [](Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) accumulate(pa, n.grad * pb.value.transpose());
    if (pb.requires_grad) accumulate(pb, pa.value.transpose() * n.grad);
  });
}

Var matmul_transposed(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorKind::kShapeMismatch,
                "matmul_transposed: inner dimensions differ");
  }
  return make_op(a.value() * b.value().transpose(), {a.node(), b.node()},
                 [](Node& n) {
                   auto& pa = *n.parents[0];
                   auto& pb = *n.parents[1];
                   if (pa.requires_grad) accumulate(pa, n.grad * pb.value);
                   if (pb.requires_grad) {
                     accumulate(pb, n.grad.transpose() * pa.value);
                   }
                 });
}

Var transpose(const Var& a) {
  return make_op(a.value().transpose(), {a.node()}, [](Node& n) {
    accumulate(*n.parents[0], n.grad.transpose());
  });
}

Var add_row_broadcast(const Var& x, const Var& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw Error(ErrorKind::kShapeMismatch,
                "add_row_broadcast: row must be 1 x cols");
  }
  Matrix out = x.value().rowwise() + row.value().row(0);
  return make_op(std::move(out), {x.node(), row.node()}, [](Node& n) {
    accumulate(*n.parents[0], n.grad);
    accumulate(*n.parents[1], n.grad.colwise().sum());
  });
}

Var exp(const Var& a) {
  Matrix out = a.value().array().exp().matrix();
  return make_op(out, {a.node()}, [out](Node& n) {
    accumulate(*n.parents[0], n.grad.cwiseProduct(out));
  });
}

Var log(const Var& a) {
  return make_op(a.value().array().log().matrix(), {a.node()}, [](Node& n) {
    auto& p = *n.parents[0];
    accumulate(p, n.grad.cwiseQuotient(p.value));
  });
}

Var sqrt(const Var& a) {
  Matrix out = a.value().array().sqrt().matrix();
  return make_op(out, {a.node()}, [out](Node& n) {
    Matrix g = Matrix::Zero(out.rows(), out.cols());
    for (Index i = 0; i < out.size(); ++i) {
      if (out(i) > 0.0) g(i) = n.grad(i) * 0.5 / out(i);
    }
    accumulate(*n.parents[0], g);
  });
}

Var square(const Var& a) {
  return make_op(a.value().array().square().matrix(), {a.node()},
                 [](Node& n) {
                   auto& p = *n.parents[0];
                   accumulate(p, 2.0 * n.grad.cwiseProduct(p.value));
                 });
}

Var pow(const Var& a, double exponent) {
  return make_op(a.value().array().pow(exponent).matrix(), {a.node()},
                 [exponent](Node& n) {
                   auto& p = *n.parents[0];
                   if (exponent == 0.0) return;
                   Matrix d = (exponent * p.value.array().pow(exponent - 1.0))
                                  .matrix();
                   accumulate(p, n.grad.cwiseProduct(d));
                 });
}

Var relu(const Var& a) {
  return make_op(a.value().cwiseMax(0.0), {a.node()}, [](Node& n) {
    auto& p = *n.parents[0];
    Matrix g = (p.value.array() > 0.0).select(n.grad, 0.0);
    accumulate(p, g);
  });
}

Var clamp(const Var& a, double lo, double hi) {
  return make_op(a.value().cwiseMax(lo).cwiseMin(hi), {a.node()},
                 [lo, hi](Node& n) {
                   auto& p = *n.parents[0];
                   Matrix g = (p.value.array() >= lo && p.value.array() <= hi)
                                  .select(n.grad, 0.0);
                   accumulate(p, g);
                 });
}

Var quick_gelu(const Var& a) {
  Matrix s = sigmoid(1.702 * a.value());
  Matrix out = a.value().cwiseProduct(s);
  return make_op(std::move(out), {a.node()}, [s](Node& n) {
    auto& p = *n.parents[0];
    Matrix d = (s.array() + 1.702 * p.value.array() * s.array() *
                                (1.0 - s.array()))
                   .matrix();
    accumulate(p, n.grad.cwiseProduct(d));
  });
}

Var gelu(const Var& a) {
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
  Matrix cdf = a.value().unaryExpr(
      [inv_sqrt2](double x) { return 0.5 * (1.0 + std::erf(x * inv_sqrt2)); });
  Matrix out = a.value().cwiseProduct(cdf);
  return make_op(std::move(out), {a.node()}, [cdf, inv_sqrt2pi](Node& n) {
    auto& p = *n.parents[0];
    Matrix pdf = p.value.unaryExpr([inv_sqrt2pi](double x) {
      return inv_sqrt2pi * std::exp(-0.5 * x * x);
    });
    Matrix d = cdf + p.value.cwiseProduct(pdf);
    accumulate(p, n.grad.cwiseProduct(d));
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_op(std::move(out), {a.node()}, [](Node& n) {
    auto& p = *n.parents[0];
    accumulate(p, Matrix::Constant(p.value.rows(), p.value.cols(), n.grad(0)));
  });
}

Var mean(const Var& a) {
  const double count = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / count);
}

Var row_sums(const Var& a) {
  return make_op(a.value().rowwise().sum(), {a.node()}, [](Node& n) {
    auto& p = *n.parents[0];
    Matrix g = n.grad.replicate(1, p.value.cols());
    accumulate(p, g);
  });
}

Var rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw Error(ErrorKind::kShapeMismatch, "rows: range out of bounds");
  }
  return make_op(a.value().middleRows(start, count), {a.node()},
                 [start, count](Node& n) {
                   auto& p = *n.parents[0];
                   Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
                   g.middleRows(start, count) = n.grad;
                   accumulate(p, g);
                 });
}

Var cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "cols: range out of bounds");
  }
  return make_op(a.value().middleCols(start, count), {a.node()},
                 [start, count](Node& n) {
                   auto& p = *n.parents[0];
                   Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
                   g.middleCols(start, count) = n.grad;
                   accumulate(p, g);
                 });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "concat_rows: no parts");
  }
  const Index width = parts.front().cols();
  Index total = 0;
  Parents parents;
  std::vector<Index> offsets;
  for (const auto& part : parts) {
    if (part.cols() != width) {
      throw Error(ErrorKind::kShapeMismatch, "concat_rows: widths differ");
    }
    offsets.push_back(total);
    total += part.rows();
    parents.push_back(part.node());
  }
  Matrix out(total, width);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    out.middleRows(offsets[i], parts[i].rows()) = parts[i].value();
  }
  return make_op(std::move(out), std::move(parents), [offsets](Node& n) {
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      auto& p = *n.parents[i];
      if (!p.requires_grad) continue;
      accumulate(p, n.grad.middleRows(offsets[i], p.value.rows()));
    }
  });
}

Var column_as_grid(const Var& a, Index col, Index h, Index w) {
  if (a.rows() != h * w || col < 0 || col >= a.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "column_as_grid: bad shape");
  }
  Matrix out(h, w);
  for (Index j = 0; j < h; ++j) {
    for (Index k = 0; k < w; ++k) out(j, k) = a.value()(j * w + k, col);
  }
  return make_op(std::move(out), {a.node()}, [col, h, w](Node& n) {
    auto& p = *n.parents[0];
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    for (Index j = 0; j < h; ++j) {
      for (Index k = 0; k < w; ++k) g(j * w + k, col) = n.grad(j, k);
    }
    accumulate(p, g);
  });
}

Var softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return make_op(out, {a.node()}, [out](Node& n) {
    Matrix dot = n.grad.cwiseProduct(out).rowwise().sum();
    Matrix g = out.cwiseProduct(n.grad - dot.replicate(1, out.cols()));
    accumulate(*n.parents[0], g);
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                    double eps) {
  const Index d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 ||
      beta.cols() != d) {
    throw Error(ErrorKind::kShapeMismatch, "layer_norm_rows: bad affine shape");
  }
  const Matrix& xv = x.value();
  Eigen::VectorXd inv_std(xv.rows());
  Matrix xhat(xv.rows(), d);
  for (Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array())
                   .rowwise() +
               beta.value().row(0).array();
  return make_op(std::move(out), {x.node(), gamma.node(), beta.node()},
                 [xhat, inv_std](Node& n) {
                   auto& px = *n.parents[0];
                   auto& pg = *n.parents[1];
                   auto& pb = *n.parents[2];
                   if (px.requires_grad) {
                     Matrix dxhat = n.grad.array().rowwise() *
                                    pg.value.row(0).array();
                     Matrix dx(dxhat.rows(), dxhat.cols());
                     for (Index r = 0; r < dxhat.rows(); ++r) {
                       const double m1 = dxhat.row(r).mean();
                       const double m2 =
                           dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
                       dx.row(r) = (dxhat.row(r).array() - m1 -
                                    xhat.row(r).array() * m2) *
                                   inv_std(r);
                     }
                     accumulate(px, dx);
                   }
                   if (pg.requires_grad) {
                     accumulate(pg, n.grad.cwiseProduct(xhat).colwise().sum());
                   }
                   if (pb.requires_grad) {
                     accumulate(pb, n.grad.colwise().sum());
                   }
                 });
}

Var l2_normalize_rows(const Var& a) {
  Eigen::VectorXd norms = a.value().rowwise().norm();
  for (Index r = 0; r < norms.size(); ++r) {
    if (!(norms(r) > 0.0)) {
      throw Error(ErrorKind::kNumerical, "l2_normalize_rows: zero-norm row");
    }
  }
  Matrix out = norms.cwiseInverse().asDiagonal() * a.value();
  return make_op(out, {a.node()}, [out, norms](Node& n) {
    Eigen::VectorXd dot = n.grad.cwiseProduct(out).rowwise().sum();
    Matrix g = norms.cwiseInverse().asDiagonal() *
               (n.grad - dot.asDiagonal() * out);
    accumulate(*n.parents[0], g);
  });
}

Var multi_head_attention(const Var& q, const Var& k, const Var& v, int heads,
                         bool causal) {
  const Index n = q.rows();
  const Index width = q.cols();
  if (k.rows() != n || v.rows() != n || k.cols() != width ||
      v.cols() != width || heads <= 0 || width % heads != 0) {
    throw Error(ErrorKind::kShapeMismatch, "multi_head_attention: bad shapes");
  }
  const Index dh = width / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Matrix> probs(heads);
  Matrix out(n, width);
  for (int h = 0; h < heads; ++h) {
    Matrix scores = q.value().middleCols(h * dh, dh) *
                    k.value().middleCols(h * dh, dh).transpose() * inv_scale;
    for (Index i = 0; i < n; ++i) {
      const Index limit = causal ? i + 1 : n;
      const double m = scores.row(i).head(limit).maxCoeff();
      double total = 0.0;
      for (Index j = 0; j < n; ++j) {
        const double e = j < limit ? std::exp(scores(i, j) - m) : 0.0;
        scores(i, j) = e;
        total += e;
      }
      scores.row(i) /= total;
    }
    out.middleCols(h * dh, dh) = scores * v.value().middleCols(h * dh, dh);
    probs[h] = std::move(scores);
  }

  return make_op(
      std::move(out), {q.node(), k.node(), v.node()},
      [probs = std::move(probs), heads, dh, inv_scale](Node& node) {
        auto& pq = *node.parents[0];
        auto& pk = *node.parents[1];
        auto& pv = *node.parents[2];
        Matrix dq = Matrix::Zero(pq.value.rows(), pq.value.cols());
        Matrix dk = Matrix::Zero(dq.rows(), dq.cols());
        Matrix dv = Matrix::Zero(dq.rows(), dq.cols());
        for (int h = 0; h < heads; ++h) {
          const Matrix& p = probs[h];
          const auto d_out = node.grad.middleCols(h * dh, dh);
          dv.middleCols(h * dh, dh) = p.transpose() * d_out;
          Matrix dp = d_out * pv.value.middleCols(h * dh, dh).transpose();
          Eigen::VectorXd dot = dp.cwiseProduct(p).rowwise().sum();
          Matrix ds = p.cwiseProduct(dp - dot.replicate(1, p.cols()));
          dq.middleCols(h * dh, dh) =
              ds * pk.value.middleCols(h * dh, dh) * inv_scale;
          dk.middleCols(h * dh, dh) =
              ds.transpose() * pq.value.middleCols(h * dh, dh) * inv_scale;
        }
        accumulate(pq, dq);
        accumulate(pk, dk);
        accumulate(pv, dv);
      });
}

}  // namespace glocal::ad
