#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "priorflow/common/rng.hpp"
#include "priorflow/nn/param_store.hpp"
#include "priorflow/nn/tape.hpp"

namespace priorflow::nn {

enum class BlockKind { kMlp, kAttention, kRecurrentCell };
enum class Activation { kTanh, kLinear };

// Shape contract of one trainable block.
//   mlp:            widths = {in, hidden..., out}
//   attention:      widths = {token_dim, head_dim}
//   recurrent-cell: widths = {input_dim, state_dim}
struct DenseBlockSpec {
  BlockKind kind = BlockKind::kMlp;
  std::vector<int> widths;
  Activation activation = Activation::kTanh;  // hidden layers only; the output layer is affine

  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  void validate() const;
};

const char* to_string(BlockKind kind);
const char* to_string(Activation act);
BlockKind block_kind_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for a rows x cols array.
Matrix init_uniform(Eigen::Index rows, Eigen::Index cols, int fan_in, Rng& rng);

class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string prefix, DenseBlockSpec spec);

  const DenseBlockSpec& spec() const { return spec_; }
  const std::string& prefix() const { return prefix_; }
  std::string weight_name(std::size_t layer) const;
  std::string bias_name(std::size_t layer) const;

  void init(ParamStore& store, Rng& rng) const;
  // x is batch x in; returns batch x out.
  Var forward(Tape& tape, const ParamStore& store, Var x) const;
  // Single-vector evaluation.
  Vector evaluate(const ParamStore& store, std::span<const double> input) const;

 private:
  std::string prefix_;
  DenseBlockSpec spec_;
};

// Single-head scaled dot-product self-attention with Q/K/V projections and no
// output projection, so every output row is a convex combination of value rows.
class SelfAttention {
 public:
  SelfAttention() = default;
  SelfAttention(std::string prefix, int token_dim, int head_dim);

  DenseBlockSpec spec() const { return {BlockKind::kAttention, {token_dim_, head_dim_}, Activation::kLinear}; }
  int token_dim() const { return token_dim_; }
  int head_dim() const { return head_dim_; }

  void init(ParamStore& store, Rng& rng) const;
  // tokens: n x token_dim -> n x head_dim
  Var forward(Tape& tape, const ParamStore& store, Var tokens) const;
  Matrix evaluate(const ParamStore& store, const Matrix& tokens) const;
  // Softmax attention matrix (n x n) for inspection.
  Matrix attention_weights(const ParamStore& store, const Matrix& tokens) const;

  std::string query_name() const { return prefix_ + ".wq"; }
  std::string key_name() const { return prefix_ + ".wk"; }
  std::string value_name() const { return prefix_ + ".wv"; }

 private:
  Var scores(Tape& tape, const ParamStore& store, Var tokens) const;

  std::string prefix_;
  int token_dim_ = 0;
  int head_dim_ = 0;
};

// GRU-style gated cell:
//   z = sigmoid(x Wz^T + h Uz^T + bz)
//   r = sigmoid(x Wr^T + h Ur^T + br)
//   n = tanh(x Wn^T + bn + r * (h Un^T))
//   h' = (1 - z) * n + z * h
// The output is the new state.
class GatedRecurrentCell {
 public:
  GatedRecurrentCell() = default;
  GatedRecurrentCell(std::string prefix, int input_dim, int state_dim);

  DenseBlockSpec spec() const { return {BlockKind::kRecurrentCell, {input_dim_, state_dim_}, Activation::kTanh}; }
  int input_dim() const { return input_dim_; }
  int state_dim() const { return state_dim_; }

  void init(ParamStore& store, Rng& rng) const;
  Vector reset_state() const { return Vector::Zero(state_dim_); }
  // state: batch x state_dim, input: batch x input_dim -> new state
  Var forward(Tape& tape, const ParamStore& store, Var state, Var input) const;
  // Returns (new_state, output); output equals new_state for this cell.
  std::pair<Vector, Vector> step(const ParamStore& store, const Vector& state, const Vector& input) const;

  std::string name(const char* array) const { return prefix_ + "." + array; }

 private:
  std::string prefix_;
  int input_dim_ = 0;
  int state_dim_ = 0;
};

}  // namespace priorflow::nn
