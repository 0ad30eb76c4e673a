#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "priorflow/common/rng.hpp"
#include "priorflow/flow/action_chunk.hpp"
#include "priorflow/nn/blocks.hpp"
#include "priorflow/nn/checkpoint.hpp"

namespace priorflow::lcm {

struct LcmSpec {
  int horizon = 8;
  int action_dim = 2;
  int feature_dim = 32;
  int state_dim = 32;
  double p_cold = 0.1;  // recorded for provenance; the loss takes it explicitly
};

struct LcmState {
  Vector hidden;
};

// Previous-chunk consistency layer (per-step linear embedding + one
// self-attention block) feeding a gated recurrent state whose linear readout is
// the H x A bias added to the prior sample.
class LocalConsistencyMemory {
 public:
  LocalConsistencyMemory(LcmSpec spec, std::uint64_t seed);

  const LcmSpec& spec() const { return spec_; }
  const nn::ParamStore& params() const { return params_; }
  nn::ParamStore& params_mut() { return params_; }

  LcmState reset_state() const { return {Vector::Zero(spec_.state_dim)}; }

  // H x A previous chunk -> H x feature_dim.
  Matrix consistency_forward(const ActionChunk& prev_chunk) const;
  // Mean-pools the features, advances the recurrent state, decodes the bias.
  std::pair<LcmState, ActionChunk> lcm_step(const LcmState& state, const Matrix& features) const;
  // consistency_forward followed by lcm_step.
  std::pair<LcmState, ActionChunk> advance(const LcmState& state, const ActionChunk& prev_chunk) const;
  // Bias for the first chunk of an episode: zero previous chunk, reset state.
  ActionChunk cold_start_bias() const;
  ActionChunk zero_chunk() const { return ActionChunk::Zero(spec_.horizon, spec_.action_dim); }

  nn::Var features_graph(nn::Tape& tape, nn::Var prev_chunk) const;
  // Returns (new_state, bias) with state as 1 x state_dim and bias as H x A.
  std::pair<nn::Var, nn::Var> step_graph(nn::Tape& tape, nn::Var state, nn::Var features) const;

  // Sets the decoder weights and bias to zero.
  void zero_decoder();
  std::string decoder_weight_name() const { return decoder_.weight_name(0); }
  std::string decoder_bias_name() const { return decoder_.bias_name(0); }

  nn::Checkpoint to_checkpoint() const;
  static LocalConsistencyMemory from_checkpoint(const nn::Checkpoint& ck);

 private:
  LocalConsistencyMemory() = default;
  void build_blocks();

  LcmSpec spec_;
  nn::Mlp embed_;
  nn::SelfAttention attention_;
  nn::GatedRecurrentCell cell_;
  nn::Mlp decoder_;
  nn::ParamStore params_;
};

// Regression target: ground-truth chunk minus prior mean.
ActionChunk residual_target(const ActionChunk& ground_truth, const ActionChunk& prior_mean);

// Flow-policy start: prior sample plus consistency bias.
ActionChunk inject_bias(const ActionChunk& prior_sample, const ActionChunk& bias);

struct LcmRolloutStep {
  ActionChunk prev_chunk;
  ActionChunk target_bias;
};
using LcmRollout = std::vector<LcmRolloutStep>;

// Unrolled MSE over every step and entry of every rollout, state carried
// within a rollout and reset between rollouts. `cold_mask`, when non-empty,
// gives one flag per step (rollouts concatenated) marking inputs replaced by zeros.
nn::GradientReport lcm_loss(const LocalConsistencyMemory& lcm, std::span<const LcmRollout> rollouts,
                            const std::vector<bool>& cold_mask = {});

// Draws the cold-start mask with probability p_cold per step.
std::vector<bool> draw_cold_mask(std::span<const LcmRollout> rollouts, double p_cold, Rng& rng);

}  // namespace priorflow::lcm
