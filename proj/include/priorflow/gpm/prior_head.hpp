#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "priorflow/nn/blocks.hpp"
#include "priorflow/nn/checkpoint.hpp"

namespace priorflow::gpm {

// Unit-norm task embedding.
using TaskEmbedding = Vector;

// v / ||v||; throws DegenerateEmbedding for a zero vector.
TaskEmbedding normalize_embedding(const Vector& v);

// Arithmetic mean across a non-empty sequence of equal-length vectors.
Vector mean_pool(std::span<const Vector> tokens);

struct PriorHeadSpec {
  int context_dim = 0;
  int hidden = 64;
  int embed_dim = 32;
};

// Two-layer MLP projecting a context representation to the retrieval space.
class PriorHead {
 public:
  PriorHead(PriorHeadSpec spec, std::uint64_t seed);

  const PriorHeadSpec& spec() const { return spec_; }
  const nn::ParamStore& params() const { return params_; }
  nn::ParamStore& params_mut() { return params_; }
  const nn::Mlp& mlp() const { return mlp_; }

  // Head output before normalization.
  Vector project(std::span<const double> context) const;
  TaskEmbedding embed(std::span<const double> context) const;
  // Batched graph: contexts (n x context_dim) -> unit rows (n x embed_dim).
  nn::Var embed_graph(nn::Tape& tape, nn::Var contexts) const;

  nn::Checkpoint to_checkpoint() const;
  static PriorHead from_checkpoint(const nn::Checkpoint& ck);

 private:
  PriorHead() = default;

  PriorHeadSpec spec_;
  nn::Mlp mlp_;
  nn::ParamStore params_;
};

inline TaskEmbedding embed_context(const PriorHead& head, std::span<const double> context) {
  return head.embed(context);
}

}  // namespace priorflow::gpm
