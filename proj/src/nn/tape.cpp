#include "priorflow/nn/tape.hpp"

#include <cmath>
#include <limits>

#include "priorflow/common/errors.hpp"

namespace priorflow::nn {

const Matrix& GradientReport::at(const std::string& name) const {
  const auto it = grads.find(name);
  if (it == grads.end()) throw InvalidInput("no gradient for '" + name + "'");
  return it->second;
}

Var Tape::push(Matrix value, bool requires_grad, Pullback pullback) {
  Node n;
  n.own = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.pullback = std::move(pullback);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::push(Matrix value, std::initializer_list<Var> parents, Pullback pullback) {
  bool rg = false;
  for (Var p : parents) rg = rg || tracks(p);
  return push(std::move(value), rg, std::move(pullback));
}

void Tape::accumulate(Var v, const Matrix& contribution) { accumulate_expr(v, contribution); }

template <typename Expr>
void Tape::accumulate_expr(Var v, const Expr& contribution) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = contribution;
  } else {
    n.grad += contribution;
  }
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::param(const ParamStore& store, const std::string& name) {
  if (const auto it = bound_params_.find(name); it != bound_params_.end()) {
    require(nodes_[it->second.id].external == &store.get(name),
            "parameter '" + name + "' bound from two different stores");
    return it->second;
  }
  Node n;
  n.external = &store.get(name);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  const Var v{nodes_.size() - 1};
  bound_params_.emplace(name, v);
  bound_order_.push_back(name);
  return v;
}

namespace {
void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidInput(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                       std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                       std::to_string(b.cols()));
}
}  // namespace

Var Tape::matmul(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  require(A.cols() == B.rows(), "matmul: inner dimensions differ");
  return push(A * B, {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    if (t.tracks(a)) t.accumulate_expr(a, g * t.value(b).transpose());
    if (t.tracks(b)) t.accumulate_expr(b, t.value(a).transpose() * g);
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  const Matrix& A = value(a);
  const Matrix& B = value(b);
  require(A.cols() == B.cols(), "matmul_nt: inner dimensions differ");
  return push(A * B.transpose(), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    if (t.tracks(a)) t.accumulate_expr(a, g * t.value(b));
    if (t.tracks(b)) t.accumulate_expr(b, g.transpose() * t.value(a));
  });
}

Var Tape::add(Var a, Var b) {
  check_same_shape(value(a), value(b), "add");
  return push(value(a) + value(b), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(value(a), value(b), "sub");
  return push(value(a) - value(b), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g);
    if (t.tracks(b)) t.accumulate_expr(b, -g);
  });
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(value(a), value(b), "mul");
  return push(value(a).cwiseProduct(value(b)), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    if (t.tracks(a)) t.accumulate_expr(a, g.cwiseProduct(t.value(b)));
    if (t.tracks(b)) t.accumulate_expr(b, g.cwiseProduct(t.value(a)));
  });
}

Var Tape::add_row(Var a, Var row) {
  const Matrix& A = value(a);
  const Matrix& r = value(row);
  require(r.rows() == 1 && r.cols() == A.cols(), "add_row: row must be 1 x cols");
  Matrix out = A.rowwise() + r.row(0);
  return push(std::move(out), {a, row}, [a, row](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g);
    if (t.tracks(row)) t.accumulate_expr(row, g.colwise().sum());
  });
}

Var Tape::affine(Var a, double scale, double shift) {
  Matrix out = (value(a).array() * scale + shift).matrix();
  return push(std::move(out), {a}, [a, scale](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate_expr(a, g * scale);
  });
}

Var Tape::tanh(Var a) {
  Matrix out = value(a).array().tanh().matrix();
  return push(std::move(out), {a}, [a](Tape& t, const Matrix& y, const Matrix& g) {
    t.accumulate_expr(a, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var Tape::sigmoid(Var a) {
  Matrix out = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
  return push(std::move(out), {a}, [a](Tape& t, const Matrix& y, const Matrix& g) {
    t.accumulate_expr(a, (g.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var Tape::softmax_rows(Var a) {
  const Matrix& A = value(a);
  Matrix out(A.rows(), A.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const double mx = A.row(i).maxCoeff();
    out.row(i) = (A.row(i).array() - mx).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return push(std::move(out), {a}, [a](Tape& t, const Matrix& y, const Matrix& g) {
    Matrix da(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double dot = g.row(i).dot(y.row(i));
      da.row(i) = (y.row(i).array() * (g.row(i).array() - dot)).matrix();
    }
    t.accumulate(a, da);
  });
}

Var Tape::concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Eigen::Index rows = value(parts[0]).rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (Var p : parts) {
    require(value(p).rows() == rows, "concat_cols: row counts differ");
    cols += value(p).cols();
    rg = rg || tracks(p);
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    out.middleCols(c, value(p).cols()) = value(p);
    c += value(p).cols();
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  return push(std::move(out), rg, [ids](Tape& t, const Matrix&, const Matrix& g) {
    Eigen::Index off = 0;
    for (Var p : ids) {
      const Eigen::Index w = t.value(p).cols();
      if (t.tracks(p)) t.accumulate_expr(p, g.middleCols(off, w));
      off += w;
    }
  });
}

Var Tape::mean_rows(Var a) {
  const Matrix& A = value(a);
  require(A.rows() > 0, "mean_rows: empty input");
  Matrix out = A.colwise().mean();
  return push(std::move(out), {a}, [a](Tape& t, const Matrix&, const Matrix& g) {
    const Eigen::Index n = t.value(a).rows();
    Matrix da = g.replicate(n, 1) / static_cast<double>(n);
    t.accumulate(a, da);
  });
}

Var Tape::reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  const Matrix& A = value(a);
  require(rows * cols == A.size(), "reshape: element count differs");
  Matrix out = Eigen::Map<const Matrix>(A.data(), rows, cols);
  return push(std::move(out), {a}, [a](Tape& t, const Matrix&, const Matrix& g) {
    const Matrix& src = t.value(a);
    t.accumulate(a, Eigen::Map<const Matrix>(g.data(), src.rows(), src.cols()));
  });
}

Var Tape::l2_normalize_rows(Var a) {
  const Matrix& A = value(a);
  Vector norms(A.rows());
  Matrix out(A.rows(), A.cols());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    norms(i) = A.row(i).norm();
    if (!(norms(i) > 0.0)) throw DegenerateEmbedding("cannot normalize a zero-norm row");
    out.row(i) = A.row(i) / norms(i);
  }
  return push(std::move(out), {a}, [a, norms](Tape& t, const Matrix& y, const Matrix& g) {
    Matrix da(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double dot = g.row(i).dot(y.row(i));
      da.row(i) = (g.row(i) - dot * y.row(i)) / norms(i);
    }
    t.accumulate(a, da);
  });
}

Var Tape::masked_logsumexp_rows(Var a, Matrix mask) {
  const Matrix& A = value(a);
  check_same_shape(A, mask, "masked_logsumexp_rows");
  Matrix out = Matrix::Zero(A.rows(), 1);
  Matrix weights = Matrix::Zero(A.rows(), A.cols());  // masked softmax, reused by the pullback
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      if (mask(i, j) != 0.0) mx = std::max(mx, A(i, j));
    if (!std::isfinite(mx)) continue;
    double s = 0.0;
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      if (mask(i, j) == 0.0) continue;
      weights(i, j) = std::exp(A(i, j) - mx);
      s += weights(i, j);
    }
    weights.row(i) /= s;
    out(i, 0) = mx + std::log(s);
  }
  return push(std::move(out), {a}, [a, weights](Tape& t, const Matrix&, const Matrix& g) {
    Matrix da = weights;
    for (Eigen::Index i = 0; i < da.rows(); ++i) da.row(i) *= g(i, 0);
    t.accumulate(a, da);
  });
}

Var Tape::mean_all(Var a) {
  const Matrix& A = value(a);
  require(A.size() > 0, "mean_all: empty input");
  Matrix out(1, 1);
  out(0, 0) = A.mean();
  return push(std::move(out), {a}, [a](Tape& t, const Matrix&, const Matrix& g) {
    const Matrix& src = t.value(a);
    t.accumulate_expr(a, Matrix::Constant(src.rows(), src.cols(), g(0, 0) / static_cast<double>(src.size())));
  });
}

Var Tape::weighted_sum(Var a, Matrix weights) {
  check_same_shape(value(a), weights, "weighted_sum");
  Matrix out(1, 1);
  out(0, 0) = value(a).cwiseProduct(weights).sum();
  return push(std::move(out), {a}, [a, weights](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate_expr(a, weights * g(0, 0));
  });
}

Var Tape::mse(Var a, Var b) {
  check_same_shape(value(a), value(b), "mse");
  const Matrix diff = value(a) - value(b);
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / static_cast<double>(diff.size());
  return push(std::move(out), {a, b}, [a, b, diff](Tape& t, const Matrix&, const Matrix& g) {
    const double c = 2.0 * g(0, 0) / static_cast<double>(diff.size());
    if (t.tracks(a)) t.accumulate_expr(a, diff * c);
    if (t.tracks(b)) t.accumulate_expr(b, diff * (-c));
  });
}

GradientReport Tape::backward(Var loss) {
  const Matrix& L = value(loss);
  if (L.rows() != 1 || L.cols() != 1) throw InvalidInput("backward: loss must be a 1 x 1 scalar");
  GradientReport report;
  report.loss = L(0, 0);
  if (!std::isfinite(report.loss)) throw NonFiniteError("backward: loss is not finite");

  if (nodes_[loss.id].requires_grad) {
    nodes_[loss.id].grad = Matrix::Ones(1, 1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.pullback || n.grad.size() == 0) continue;
      // Interior gradients are consumed here; only parameter leaves keep theirs.
      const Matrix grad = std::move(n.grad);
      n.pullback(*this, n.value(), grad);
    }
  }
  for (const auto& name : bound_order_) {
    const Node& n = nodes_[bound_params_.at(name).id];
    report.grads.emplace(name, n.grad.size() ? n.grad : Matrix::Zero(n.value().rows(), n.value().cols()));
  }
  return report;
}

}  // namespace priorflow::nn
