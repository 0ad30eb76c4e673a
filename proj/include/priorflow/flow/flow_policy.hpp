#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "priorflow/common/counters.hpp"
#include "priorflow/common/rng.hpp"
#include "priorflow/flow/action_chunk.hpp"
#include "priorflow/nn/blocks.hpp"
#include "priorflow/nn/checkpoint.hpp"

namespace priorflow::flow {

// Straight-line path between a source and a target chunk.
ActionChunk ot_interpolate(const ActionChunk& x0, const ActionChunk& x1, double t);

// Constant velocity of the straight-line path; independent of t.
ActionChunk target_velocity(const ActionChunk& x0, const ActionChunk& x1);

// (t, sin 2 pi t, cos 2 pi t) as a 1 x 3 row.
Matrix time_features(double t);
inline constexpr int kTimeFeatures = 3;

using VelocityFn = std::function<ActionChunk(double t, const ActionChunk& x)>;

// `steps` forward-Euler steps of size 1/steps from t = 0 to t = 1.
// The velocity function is called exactly `steps` times.
ActionChunk euler_integrate(const VelocityFn& velocity, const ActionChunk& x_init, int steps);

// Per-action-dimension affine normalization fitted on training chunks.
struct Normalizer {
  RowVector mean;
  RowVector scale;

  static Normalizer identity(int action_dim);
  static Normalizer fit(std::span<const ActionChunk> chunks);

  ActionChunk normalize(const ActionChunk& raw) const;
  ActionChunk denormalize(const ActionChunk& normalized) const;
  // Variances transform with the squared scale.
  ActionChunk normalize_variance(const ActionChunk& var) const;
};

struct FlowPolicySpec {
  int horizon = 8;
  int action_dim = 2;
  int context_dim = 0;
  std::vector<int> hidden = {128, 128};
  // Adds a bias-free linear map x_t -> velocity alongside the MLP.
  bool linear_skip = true;

  int chunk_size() const { return horizon * action_dim; }
  nn::DenseBlockSpec net_spec() const;
};

// Conditional velocity field v(t, x, context) over normalized action chunks.
class FlowPolicy {
 public:
  FlowPolicy(FlowPolicySpec spec, std::uint64_t seed);

  const FlowPolicySpec& spec() const { return spec_; }
  const nn::ParamStore& params() const { return params_; }
  nn::ParamStore& params_mut() { return params_; }
  const Normalizer& normalizer() const { return normalizer_; }
  void set_normalizer(Normalizer n);
  const std::string& suite_fingerprint() const { return suite_fingerprint_; }
  void set_suite_fingerprint(std::string fp) { suite_fingerprint_ = std::move(fp); }

  // Batched graph: rows of flattened x_t, time features and contexts.
  nn::Var velocity_graph(nn::Tape& tape, nn::Var x_flat, nn::Var t_feats, nn::Var context) const;

  // One velocity-network evaluation on a normalized chunk. Bumps counters->velocity_evals.
  ActionChunk velocity(double t, const ActionChunk& x_normalized, std::span<const double> context,
                       CallCounters* counters) const;

  // Euler integration in normalized space; NFE == steps.
  ActionChunk integrate(std::span<const double> context, const ActionChunk& x_init_normalized, int steps,
                        CallCounters* counters) const;

  // Raw-unit convenience: normalize x_init, integrate, denormalize.
  ActionChunk generate(std::span<const double> context, const ActionChunk& x_init_raw, int steps,
                       CallCounters* counters) const;

  nn::Checkpoint to_checkpoint() const;
  // Refuses checkpoints whose suite fingerprint differs from `expected_fingerprint`
  // (pass an empty string to skip the check).
  static FlowPolicy from_checkpoint(const nn::Checkpoint& ck, const std::string& expected_fingerprint);

  static constexpr const char* kSkipWeight = "velocity.skip.weight";

 private:
  FlowPolicy() = default;

  FlowPolicySpec spec_;
  nn::Mlp net_;
  nn::ParamStore params_;
  Normalizer normalizer_;
  std::string suite_fingerprint_;
};

struct CfmExample {
  Vector context;
  ActionChunk x0;  // normalized source
  ActionChunk x1;  // normalized target
  double t = 0.0;
};

using VelocityGraph = std::function<nn::Var(nn::Tape&, nn::Var x_flat, nn::Var t_feats, nn::Var context)>;

// Mean squared error between v(t, x_t, c) and x1 - x0 over every batch element
// and chunk entry, with gradients of whatever parameters the graph binds.
nn::GradientReport cfm_loss(const VelocityGraph& velocity, std::span<const CfmExample> batch);

inline nn::GradientReport cfm_loss(const FlowPolicy& policy, std::span<const CfmExample> batch) {
  return cfm_loss(
      [&policy](nn::Tape& t, nn::Var x, nn::Var tf, nn::Var c) { return policy.velocity_graph(t, x, tf, c); },
      batch);
}

}  // namespace priorflow::flow
