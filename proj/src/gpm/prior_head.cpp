#include "priorflow/gpm/prior_head.hpp"

#include "priorflow/common/errors.hpp"

namespace priorflow::gpm {

TaskEmbedding normalize_embedding(const Vector& v) {
  const double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw DegenerateEmbedding("embedding has zero (or non-finite) norm");
  return v / n;
}

Vector mean_pool(std::span<const Vector> tokens) {
  require(!tokens.empty(), "mean_pool: empty token sequence");
  Vector sum = Vector::Zero(tokens.front().size());
  for (const auto& t : tokens) {
    require(t.size() == sum.size(), "mean_pool: token dims differ");
    sum += t;
  }
  return sum / static_cast<double>(tokens.size());
}

PriorHead::PriorHead(PriorHeadSpec spec, std::uint64_t seed) : spec_(spec) {
  require(spec_.context_dim > 0 && spec_.hidden > 0 && spec_.embed_dim > 0, "PriorHead: dims must be positive");
  mlp_ = nn::Mlp("prior_head", {nn::BlockKind::kMlp, {spec_.context_dim, spec_.hidden, spec_.embed_dim},
                                nn::Activation::kTanh});
  Rng rng(seed);
  mlp_.init(params_, rng);
}

Vector PriorHead::project(std::span<const double> context) const { return mlp_.evaluate(params_, context); }

TaskEmbedding PriorHead::embed(std::span<const double> context) const { return normalize_embedding(project(context)); }

nn::Var PriorHead::embed_graph(nn::Tape& tape, nn::Var contexts) const {
  return tape.l2_normalize_rows(mlp_.forward(tape, params_, contexts));
}

nn::Checkpoint PriorHead::to_checkpoint() const {
  nn::Checkpoint ck;
  ck.kind = "prior-head";
  ck.meta["context_dim"] = spec_.context_dim;
  ck.meta["hidden"] = spec_.hidden;
  ck.meta["embed_dim"] = spec_.embed_dim;
  ck.meta["activation"] = "tanh";
  ck.params = params_;
  return ck;
}

PriorHead PriorHead::from_checkpoint(const nn::Checkpoint& ck) {
  if (ck.kind != "prior-head") throw CorruptFile("checkpoint kind is '" + ck.kind + "', expected prior-head");
  PriorHead h;
  h.spec_.context_dim = ck.meta.at("context_dim");
  h.spec_.hidden = ck.meta.at("hidden");
  h.spec_.embed_dim = ck.meta.at("embed_dim");
  h.mlp_ = nn::Mlp("prior_head", {nn::BlockKind::kMlp, {h.spec_.context_dim, h.spec_.hidden, h.spec_.embed_dim},
                                  nn::Activation::kTanh});
  h.params_ = ck.params;
  for (std::size_t l = 0; l < 2; ++l)
    require(h.params_.contains(h.mlp_.weight_name(l)), "prior-head checkpoint lacks " + h.mlp_.weight_name(l));
  return h;
}

}  // namespace priorflow::gpm
