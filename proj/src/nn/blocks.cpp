#include "priorflow/nn/blocks.hpp"

#include <cmath>

#include "priorflow/common/errors.hpp"

namespace priorflow::nn {

void DenseBlockSpec::validate() const {
  switch (kind) {
    case BlockKind::kMlp:
      require(widths.size() >= 2, "mlp spec needs at least input and output widths");
      break;
    case BlockKind::kAttention:
    case BlockKind::kRecurrentCell:
      require(widths.size() == 2, std::string(to_string(kind)) + " spec needs exactly two widths");
      break;
  }
  for (int w : widths) require(w > 0, "block widths must be positive");
}

const char* to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::kMlp: return "mlp";
    case BlockKind::kAttention: return "attention";
    case BlockKind::kRecurrentCell: return "recurrent-cell";
  }
  return "?";
}

const char* to_string(Activation act) { return act == Activation::kTanh ? "tanh" : "linear"; }

BlockKind block_kind_from_string(const std::string& s) {
  if (s == "mlp") return BlockKind::kMlp;
  if (s == "attention") return BlockKind::kAttention;
  if (s == "recurrent-cell") return BlockKind::kRecurrentCell;
  throw InvalidInput("unknown block kind '" + s + "'");
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "linear") return Activation::kLinear;
  throw InvalidInput("unknown activation '" + s + "'");
}

Matrix init_uniform(Eigen::Index rows, Eigen::Index cols, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

// ---------------------------------------------------------------- Mlp

Mlp::Mlp(std::string prefix, DenseBlockSpec spec) : prefix_(std::move(prefix)), spec_(std::move(spec)) {
  require(spec_.kind == BlockKind::kMlp, "Mlp needs an mlp spec");
  spec_.validate();
}

std::string Mlp::weight_name(std::size_t layer) const { return prefix_ + ".w" + std::to_string(layer); }
std::string Mlp::bias_name(std::size_t layer) const { return prefix_ + ".b" + std::to_string(layer); }

void Mlp::init(ParamStore& store, Rng& rng) const {
  for (std::size_t l = 0; l + 1 < spec_.widths.size(); ++l) {
    const int in = spec_.widths[l];
    const int out = spec_.widths[l + 1];
    store.add(weight_name(l), init_uniform(out, in, in, rng));
    store.add(bias_name(l), init_uniform(1, out, in, rng));
  }
}

Var Mlp::forward(Tape& tape, const ParamStore& store, Var x) const {
  if (tape.value(x).cols() != spec_.input_dim())
    throw InvalidInput(prefix_ + ": expected input dim " + std::to_string(spec_.input_dim()) + ", got " +
                       std::to_string(tape.value(x).cols()));
  Var h = x;
  const std::size_t layers = spec_.widths.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    h = tape.add_row(tape.matmul_nt(h, tape.param(store, weight_name(l))), tape.param(store, bias_name(l)));
    if (l + 1 < layers && spec_.activation == Activation::kTanh) h = tape.tanh(h);
  }
  return h;
}

Vector Mlp::evaluate(const ParamStore& store, std::span<const double> input) const {
  if (static_cast<int>(input.size()) != spec_.input_dim())
    throw InvalidInput(prefix_ + ": expected input dim " + std::to_string(spec_.input_dim()) + ", got " +
                       std::to_string(input.size()));
  Tape tape;
  Matrix row = Eigen::Map<const Matrix>(input.data(), 1, static_cast<Eigen::Index>(input.size()));
  const Var out = forward(tape, store, tape.constant(std::move(row)));
  return tape.value(out).row(0).transpose();
}

// ---------------------------------------------------------------- SelfAttention

SelfAttention::SelfAttention(std::string prefix, int token_dim, int head_dim)
    : prefix_(std::move(prefix)), token_dim_(token_dim), head_dim_(head_dim) {
  spec().validate();
}

void SelfAttention::init(ParamStore& store, Rng& rng) const {
  store.add(query_name(), init_uniform(head_dim_, token_dim_, token_dim_, rng));
  store.add(key_name(), init_uniform(head_dim_, token_dim_, token_dim_, rng));
  store.add(value_name(), init_uniform(head_dim_, token_dim_, token_dim_, rng));
}

Var SelfAttention::scores(Tape& tape, const ParamStore& store, Var tokens) const {
  const Matrix& x = tape.value(tokens);
  require(x.rows() > 0, prefix_ + ": attention needs at least one token");
  require(x.cols() == token_dim_, prefix_ + ": token dim mismatch");
  const Var q = tape.matmul_nt(tokens, tape.param(store, query_name()));
  const Var k = tape.matmul_nt(tokens, tape.param(store, key_name()));
  return tape.softmax_rows(tape.affine(tape.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(head_dim_)), 0.0));
}

Var SelfAttention::forward(Tape& tape, const ParamStore& store, Var tokens) const {
  const Var weights = scores(tape, store, tokens);
  const Var v = tape.matmul_nt(tokens, tape.param(store, value_name()));
  return tape.matmul(weights, v);
}

Matrix SelfAttention::evaluate(const ParamStore& store, const Matrix& tokens) const {
  Tape tape;
  return tape.value(forward(tape, store, tape.constant(tokens)));
}

Matrix SelfAttention::attention_weights(const ParamStore& store, const Matrix& tokens) const {
  Tape tape;
  return tape.value(scores(tape, store, tape.constant(tokens)));
}

// ---------------------------------------------------------------- GatedRecurrentCell

GatedRecurrentCell::GatedRecurrentCell(std::string prefix, int input_dim, int state_dim)
    : prefix_(std::move(prefix)), input_dim_(input_dim), state_dim_(state_dim) {
  spec().validate();
}

void GatedRecurrentCell::init(ParamStore& store, Rng& rng) const {
  for (const char* gate : {"z", "r", "n"}) {
    store.add(prefix_ + ".w" + gate, init_uniform(state_dim_, input_dim_, state_dim_, rng));
    store.add(prefix_ + ".u" + gate, init_uniform(state_dim_, state_dim_, state_dim_, rng));
    store.add(prefix_ + ".b" + gate, init_uniform(1, state_dim_, state_dim_, rng));
  }
}

Var GatedRecurrentCell::forward(Tape& tape, const ParamStore& store, Var state, Var input) const {
  const Matrix& h = tape.value(state);
  const Matrix& x = tape.value(input);
  require(h.cols() == state_dim_, prefix_ + ": state dim mismatch");
  require(x.cols() == input_dim_, prefix_ + ": input dim mismatch");
  require(h.rows() == x.rows(), prefix_ + ": batch size mismatch");

  auto p = [&](const char* n) { return tape.param(store, name(n)); };
  const Var z = tape.sigmoid(tape.add_row(tape.add(tape.matmul_nt(input, p("wz")), tape.matmul_nt(state, p("uz"))), p("bz")));
  const Var r = tape.sigmoid(tape.add_row(tape.add(tape.matmul_nt(input, p("wr")), tape.matmul_nt(state, p("ur"))), p("br")));
  const Var n = tape.tanh(
      tape.add(tape.add_row(tape.matmul_nt(input, p("wn")), p("bn")), tape.mul(r, tape.matmul_nt(state, p("un")))));
  // h' = n + z * (h - n)
  return tape.add(n, tape.mul(z, tape.sub(state, n)));
}

std::pair<Vector, Vector> GatedRecurrentCell::step(const ParamStore& store, const Vector& state,
                                                   const Vector& input) const {
  require(state.size() == state_dim_, prefix_ + ": state dim mismatch");
  require(input.size() == input_dim_, prefix_ + ": input dim mismatch");
  Tape tape;
  const Var h = tape.constant(state.transpose());
  const Var x = tape.constant(input.transpose());
  Vector next = tape.value(forward(tape, store, h, x)).row(0).transpose();
  return {next, next};
}

}  // namespace priorflow::nn
