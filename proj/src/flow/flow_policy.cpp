#include "priorflow/flow/flow_policy.hpp"

#include <cmath>
#include <numbers>

#include "priorflow/common/errors.hpp"

namespace priorflow::flow {

ActionChunk ot_interpolate(const ActionChunk& x0, const ActionChunk& x1, double t) {
  check_same_shape(x0, x1, "ot_interpolate");
  require(t >= 0.0 && t <= 1.0, "ot_interpolate: t must lie in [0, 1]");
  if (t == 0.0) return x0;
  if (t == 1.0) return x1;
  return (1.0 - t) * x0 + t * x1;
}

ActionChunk target_velocity(const ActionChunk& x0, const ActionChunk& x1) {
  check_same_shape(x0, x1, "target_velocity");
  return x1 - x0;
}

Matrix time_features(double t) {
  Matrix f(1, kTimeFeatures);
  f << t, std::sin(2.0 * std::numbers::pi * t), std::cos(2.0 * std::numbers::pi * t);
  return f;
}

ActionChunk euler_integrate(const VelocityFn& velocity, const ActionChunk& x_init, int steps) {
  require(steps >= 1, "euler_integrate: number of steps must be >= 1");
  const double h = 1.0 / static_cast<double>(steps);
  ActionChunk x = x_init;
  for (int i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) * h;
    const ActionChunk v = velocity(t, x);
    check_same_shape(v, x, "euler_integrate");
    x += h * v;
  }
  return x;
}

// ---------------------------------------------------------------- Normalizer

Normalizer Normalizer::identity(int action_dim) {
  return {RowVector::Zero(action_dim), RowVector::Ones(action_dim)};
}

Normalizer Normalizer::fit(std::span<const ActionChunk> chunks) {
  require(!chunks.empty(), "Normalizer::fit: no chunks");
  const Eigen::Index a = chunks.front().cols();
  RowVector sum = RowVector::Zero(a);
  double n = 0.0;
  for (const auto& c : chunks) {
    require(c.cols() == a, "Normalizer::fit: action dims differ");
    sum += c.colwise().sum();
    n += static_cast<double>(c.rows());
  }
  const RowVector mean = sum / n;
  RowVector sq = RowVector::Zero(a);
  for (const auto& c : chunks) sq += (c.rowwise() - mean).array().square().matrix().colwise().sum();
  RowVector scale = (sq / n).array().sqrt().matrix();
  for (Eigen::Index j = 0; j < a; ++j)
    if (!(scale(j) > 1e-8)) scale(j) = 1.0;
  return {mean, scale};
}

ActionChunk Normalizer::normalize(const ActionChunk& raw) const {
  require(raw.cols() == mean.size(), "normalize: action dim mismatch");
  return ((raw.rowwise() - mean).array().rowwise() / scale.array()).matrix();
}

ActionChunk Normalizer::denormalize(const ActionChunk& normalized) const {
  require(normalized.cols() == mean.size(), "denormalize: action dim mismatch");
  return ((normalized.array().rowwise() * scale.array()).matrix().rowwise() + mean);
}

ActionChunk Normalizer::normalize_variance(const ActionChunk& var) const {
  require(var.cols() == scale.size(), "normalize_variance: action dim mismatch");
  return (var.array().rowwise() / scale.array().square()).matrix();
}

// ---------------------------------------------------------------- FlowPolicy

nn::DenseBlockSpec FlowPolicySpec::net_spec() const {
  nn::DenseBlockSpec s;
  s.kind = nn::BlockKind::kMlp;
  s.activation = nn::Activation::kTanh;
  s.widths.push_back(chunk_size() + kTimeFeatures + context_dim);
  for (int h : hidden) s.widths.push_back(h);
  s.widths.push_back(chunk_size());
  return s;
}

FlowPolicy::FlowPolicy(FlowPolicySpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  require(spec_.horizon >= 1 && spec_.action_dim >= 1 && spec_.context_dim >= 0, "FlowPolicy: bad dimensions");
  net_ = nn::Mlp("velocity", spec_.net_spec());
  Rng rng(seed);
  net_.init(params_, rng);
  if (spec_.linear_skip) params_.add(kSkipWeight, Matrix::Zero(spec_.chunk_size(), spec_.chunk_size()));
  normalizer_ = Normalizer::identity(spec_.action_dim);
}

void FlowPolicy::set_normalizer(Normalizer n) {
  require(n.mean.size() == spec_.action_dim && n.scale.size() == spec_.action_dim, "set_normalizer: dim mismatch");
  normalizer_ = std::move(n);
}

nn::Var FlowPolicy::velocity_graph(nn::Tape& tape, nn::Var x_flat, nn::Var t_feats, nn::Var context) const {
  const nn::Var parts[] = {x_flat, t_feats, context};
  const nn::Var out = net_.forward(tape, params_, tape.concat_cols(parts));
  if (!spec_.linear_skip) return out;
  return tape.add(out, tape.matmul_nt(x_flat, tape.param(params_, kSkipWeight)));
}

ActionChunk FlowPolicy::velocity(double t, const ActionChunk& x_normalized, std::span<const double> context,
                                 CallCounters* counters) const {
  require(x_normalized.rows() == spec_.horizon && x_normalized.cols() == spec_.action_dim,
          "velocity: chunk shape mismatch");
  require(static_cast<int>(context.size()) == spec_.context_dim, "velocity: context dim mismatch");
  if (counters) ++counters->velocity_evals;
  nn::Tape tape;
  const auto x = tape.constant(flatten(x_normalized));
  const auto tf = tape.constant(time_features(t));
  const auto c = tape.constant(Eigen::Map<const Matrix>(context.data(), 1, spec_.context_dim));
  const auto& out = tape.value(velocity_graph(tape, x, tf, c));
  return unflatten({out.data(), static_cast<std::size_t>(out.size())}, spec_.horizon, spec_.action_dim);
}

ActionChunk FlowPolicy::integrate(std::span<const double> context, const ActionChunk& x_init_normalized, int steps,
                                  CallCounters* counters) const {
  return euler_integrate(
      [&](double t, const ActionChunk& x) { return velocity(t, x, context, counters); }, x_init_normalized, steps);
}

ActionChunk FlowPolicy::generate(std::span<const double> context, const ActionChunk& x_init_raw, int steps,
                                 CallCounters* counters) const {
  return normalizer_.denormalize(integrate(context, normalizer_.normalize(x_init_raw), steps, counters));
}

nn::Checkpoint FlowPolicy::to_checkpoint() const {
  nn::Checkpoint ck;
  ck.kind = "flow-policy";
  ck.meta["horizon"] = spec_.horizon;
  ck.meta["action_dim"] = spec_.action_dim;
  ck.meta["context_dim"] = spec_.context_dim;
  ck.meta["hidden"] = spec_.hidden;
  ck.meta["linear_skip"] = spec_.linear_skip;
  ck.meta["activation"] = nn::to_string(nn::Activation::kTanh);
  ck.meta["suite_fingerprint"] = suite_fingerprint_;
  ck.params = params_;
  ck.buffers["normalizer.mean"] = normalizer_.mean;
  ck.buffers["normalizer.scale"] = normalizer_.scale;
  return ck;
}

FlowPolicy FlowPolicy::from_checkpoint(const nn::Checkpoint& ck, const std::string& expected_fingerprint) {
  if (ck.kind != "flow-policy") throw CorruptFile("checkpoint kind is '" + ck.kind + "', expected flow-policy");
  const std::string fp = ck.meta.value("suite_fingerprint", "");
  if (!expected_fingerprint.empty() && fp != expected_fingerprint)
    throw FingerprintMismatch("policy was trained on suite " + fp + ", dataset is " + expected_fingerprint);
  FlowPolicy p;
  p.spec_.horizon = ck.meta.at("horizon");
  p.spec_.action_dim = ck.meta.at("action_dim");
  p.spec_.context_dim = ck.meta.at("context_dim");
  p.spec_.hidden = ck.meta.at("hidden").get<std::vector<int>>();
  p.spec_.linear_skip = ck.meta.value("linear_skip", false);
  p.net_ = nn::Mlp("velocity", p.spec_.net_spec());
  if (p.spec_.linear_skip) require(ck.params.contains(kSkipWeight), "policy checkpoint lacks the skip weight");
  for (std::size_t l = 0; l + 1 < p.spec_.net_spec().widths.size(); ++l) {
    require(ck.params.contains(p.net_.weight_name(l)), "policy checkpoint lacks " + p.net_.weight_name(l));
  }
  p.params_ = ck.params;
  p.suite_fingerprint_ = fp;
  p.normalizer_.mean = ck.buffers.at("normalizer.mean");
  p.normalizer_.scale = ck.buffers.at("normalizer.scale");
  return p;
}

// ---------------------------------------------------------------- CFM loss

nn::GradientReport cfm_loss(const VelocityGraph& velocity, std::span<const CfmExample> batch) {
  require(!batch.empty(), "cfm_loss: empty batch");
  const auto& first = batch.front();
  const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index d = first.x0.size();
  const Eigen::Index dc = first.context.size();
  Matrix xt(b, d), target(b, d), tf(b, kTimeFeatures), ctx(b, dc);
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& ex = batch[static_cast<std::size_t>(i)];
    require(ex.context.size() == dc, "cfm_loss: context dims differ within batch");
    xt.row(i) = flatten(ot_interpolate(ex.x0, ex.x1, ex.t));
    target.row(i) = flatten(target_velocity(ex.x0, ex.x1));
    tf.row(i) = time_features(ex.t);
    ctx.row(i) = ex.context.transpose();
  }
  nn::Tape tape;
  const auto pred = velocity(tape, tape.constant(std::move(xt)), tape.constant(std::move(tf)),
                             tape.constant(std::move(ctx)));
  const auto loss = tape.mse(pred, tape.constant(std::move(target)));
  return tape.backward(loss);
}

}  // namespace priorflow::flow
