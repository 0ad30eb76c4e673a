#include "priorflow/lcm/lcm.hpp"

#include "priorflow/common/errors.hpp"

namespace priorflow::lcm {

LocalConsistencyMemory::LocalConsistencyMemory(LcmSpec spec, std::uint64_t seed) : spec_(spec) {
  build_blocks();
  Rng rng(seed);
  embed_.init(params_, rng);
  attention_.init(params_, rng);
  cell_.init(params_, rng);
  decoder_.init(params_, rng);
}

void LocalConsistencyMemory::build_blocks() {
  require(spec_.horizon >= 1 && spec_.action_dim >= 1 && spec_.feature_dim >= 1 && spec_.state_dim >= 1,
          "LCM: dims must be positive");
  require(spec_.p_cold >= 0.0 && spec_.p_cold <= 1.0, "LCM: p_cold must lie in [0, 1]");
  embed_ = nn::Mlp("lcm.embed", {nn::BlockKind::kMlp, {spec_.action_dim, spec_.feature_dim}, nn::Activation::kLinear});
  attention_ = nn::SelfAttention("lcm.attention", spec_.feature_dim, spec_.feature_dim);
  cell_ = nn::GatedRecurrentCell("lcm.cell", spec_.feature_dim, spec_.state_dim);
  decoder_ = nn::Mlp("lcm.decoder", {nn::BlockKind::kMlp, {spec_.state_dim, spec_.horizon * spec_.action_dim},
                                     nn::Activation::kLinear});
}

nn::Var LocalConsistencyMemory::features_graph(nn::Tape& tape, nn::Var prev_chunk) const {
  const Matrix& x = tape.value(prev_chunk);
  require(x.rows() == spec_.horizon && x.cols() == spec_.action_dim, "LCM: previous chunk must be H x A");
  return attention_.forward(tape, params_, embed_.forward(tape, params_, prev_chunk));
}

std::pair<nn::Var, nn::Var> LocalConsistencyMemory::step_graph(nn::Tape& tape, nn::Var state,
                                                               nn::Var features) const {
  require(tape.value(features).rows() == spec_.horizon && tape.value(features).cols() == spec_.feature_dim,
          "LCM: features must be H x feature_dim");
  const nn::Var pooled = tape.mean_rows(features);
  const nn::Var next = cell_.forward(tape, params_, state, pooled);
  const nn::Var flat = decoder_.forward(tape, params_, next);
  return {next, tape.reshape(flat, spec_.horizon, spec_.action_dim)};
}

Matrix LocalConsistencyMemory::consistency_forward(const ActionChunk& prev_chunk) const {
  nn::Tape tape;
  return tape.value(features_graph(tape, tape.constant(prev_chunk)));
}

std::pair<LcmState, ActionChunk> LocalConsistencyMemory::lcm_step(const LcmState& state,
                                                                   const Matrix& features) const {
  require(state.hidden.size() == spec_.state_dim, "LCM: state dim mismatch");
  nn::Tape tape;
  const auto [next, bias] = step_graph(tape, tape.constant(state.hidden.transpose()), tape.constant(features));
  return {LcmState{tape.value(next).row(0).transpose()}, tape.value(bias)};
}

std::pair<LcmState, ActionChunk> LocalConsistencyMemory::advance(const LcmState& state,
                                                                  const ActionChunk& prev_chunk) const {
  return lcm_step(state, consistency_forward(prev_chunk));
}

ActionChunk LocalConsistencyMemory::cold_start_bias() const { return advance(reset_state(), zero_chunk()).second; }

void LocalConsistencyMemory::zero_decoder() {
  params_.get_mut(decoder_weight_name()).setZero();
  params_.get_mut(decoder_bias_name()).setZero();
}

nn::Checkpoint LocalConsistencyMemory::to_checkpoint() const {
  nn::Checkpoint ck;
  ck.kind = "lcm";
  ck.meta["horizon"] = spec_.horizon;
  ck.meta["action_dim"] = spec_.action_dim;
  ck.meta["feature_dim"] = spec_.feature_dim;
  ck.meta["state_dim"] = spec_.state_dim;
  ck.meta["p_cold"] = spec_.p_cold;
  ck.params = params_;
  return ck;
}

LocalConsistencyMemory LocalConsistencyMemory::from_checkpoint(const nn::Checkpoint& ck) {
  if (ck.kind != "lcm") throw CorruptFile("checkpoint kind is '" + ck.kind + "', expected lcm");
  LocalConsistencyMemory m;
  m.spec_.horizon = ck.meta.at("horizon");
  m.spec_.action_dim = ck.meta.at("action_dim");
  m.spec_.feature_dim = ck.meta.at("feature_dim");
  m.spec_.state_dim = ck.meta.at("state_dim");
  m.spec_.p_cold = ck.meta.at("p_cold");
  m.build_blocks();
  m.params_ = ck.params;
  require(m.params_.contains(m.decoder_weight_name()), "lcm checkpoint lacks decoder weights");
  return m;
}

ActionChunk residual_target(const ActionChunk& ground_truth, const ActionChunk& prior_mean) {
  check_same_shape(ground_truth, prior_mean, "residual_target");
  return ground_truth - prior_mean;
}

ActionChunk inject_bias(const ActionChunk& prior_sample, const ActionChunk& bias) {
  check_same_shape(prior_sample, bias, "inject_bias");
  return prior_sample + bias;
}

std::vector<bool> draw_cold_mask(std::span<const LcmRollout> rollouts, double p_cold, Rng& rng) {
  require(p_cold >= 0.0 && p_cold <= 1.0, "draw_cold_mask: p_cold must lie in [0, 1]");
  std::vector<bool> mask;
  std::bernoulli_distribution coin(p_cold);
  for (const auto& r : rollouts)
    for (std::size_t i = 0; i < r.size(); ++i) mask.push_back(p_cold > 0.0 && coin(rng));
  return mask;
}

nn::GradientReport lcm_loss(const LocalConsistencyMemory& lcm, std::span<const LcmRollout> rollouts,
                            const std::vector<bool>& cold_mask) {
  std::size_t total = 0;
  for (const auto& r : rollouts) total += r.size();
  require(total > 0, "lcm_loss: empty rollout");
  require(cold_mask.empty() || cold_mask.size() == total, "lcm_loss: mask needs one flag per step");

  const auto& spec = lcm.spec();
  const ActionChunk zeros = lcm.zero_chunk();
  nn::Tape tape;
  std::vector<nn::Var> step_losses;
  step_losses.reserve(total);
  std::size_t flat = 0;
  for (const auto& rollout : rollouts) {
    nn::Var state = tape.constant(Matrix::Zero(1, spec.state_dim));
    for (const auto& step : rollout) {
      check_same_shape(step.prev_chunk, zeros, "lcm_loss prev_chunk");
      check_same_shape(step.target_bias, zeros, "lcm_loss target");
      const bool cold = !cold_mask.empty() && cold_mask[flat];
      ++flat;
      const nn::Var input = tape.constant(cold ? zeros : step.prev_chunk);
      const auto [next, bias] = lcm.step_graph(tape, state, lcm.features_graph(tape, input));
      step_losses.push_back(tape.mse(bias, tape.constant(step.target_bias)));
      state = next;
    }
  }
  return tape.backward(tape.mean_all(tape.concat_cols(step_losses)));
}

}  // namespace priorflow::lcm
