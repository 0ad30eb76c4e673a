#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "priorflow/nn/matrix.hpp"
#include "priorflow/nn/param_store.hpp"

namespace priorflow::nn {

struct GradientReport {
  double loss = 0.0;
  std::map<std::string, Matrix> grads;

  const Matrix& at(const std::string& name) const;
};

struct Var {
  std::size_t id = 0;
};

// Records dense matrix operations for one forward pass and replays them in
// reverse to accumulate gradients. A tape is single-use and single-threaded;
// concurrent forward passes each build their own tape over a shared const
// ParamStore.
class Tape {
 public:
  Var constant(Matrix value);
  // Leaf that reads the store's array in place; the store must outlive the tape.
  Var param(const ParamStore& store, const std::string& name);

  const Matrix& value(Var v) const { return nodes_[v.id].value(); }
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var add_row(Var a, Var row);  // broadcast a 1 x m row over every row of a
  Var affine(Var a, double scale, double shift);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var softmax_rows(Var a);
  Var concat_cols(std::span<const Var> parts);
  Var mean_rows(Var a);  // n x m -> 1 x m
  Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);
  Var l2_normalize_rows(Var a);
  // Row-wise log(sum_j mask_ij * exp(a_ij)); rows with an empty mask give 0.
  Var masked_logsumexp_rows(Var a, Matrix mask);
  Var mean_all(Var a);
  Var weighted_sum(Var a, Matrix weights);  // -> 1 x 1
  Var mse(Var a, Var b);                    // mean of squared differences -> 1 x 1

  // Reverse sweep from a 1 x 1 loss. Every parameter bound with param()
  // receives an entry in the report (zeros when the loss does not reach it).
  GradientReport backward(Var loss);

 private:
  using Pullback = std::function<void(Tape&, const Matrix& out, const Matrix& grad)>;

  struct Node {
    Matrix own;
    const Matrix* external = nullptr;
    Matrix grad;
    Pullback pullback;
    bool requires_grad = false;

    const Matrix& value() const { return external ? *external : own; }
  };

  Var push(Matrix value, std::initializer_list<Var> parents, Pullback pullback);
  Var push(Matrix value, bool requires_grad, Pullback pullback);
  bool tracks(Var v) const { return nodes_[v.id].requires_grad; }
  void accumulate(Var v, const Matrix& contribution);
  template <typename Expr>
  void accumulate_expr(Var v, const Expr& contribution);

  std::vector<Node> nodes_;
  std::unordered_map<std::string, Var> bound_params_;
  std::vector<std::string> bound_order_;
};

}  // namespace priorflow::nn
