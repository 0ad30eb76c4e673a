#include "priorflow/eval/rollout.hpp"

#include <cmath>

#include "priorflow/common/errors.hpp"

namespace priorflow::eval {

const char* to_string(InitMode m) {
  switch (m) {
    case InitMode::kGaussian: return "gaussian-init";
    case InitMode::kGpm: return "gpm-init";
    case InitMode::kGpmLcm: return "gpm+lcm";
  }
  return "?";
}

InitMode mode_from_string(const std::string& s) {
  for (InitMode m : kAllModes)
    if (s == to_string(m)) return m;
  throw InvalidInput("unknown mode '" + s + "' (expected gaussian-init, gpm-init or gpm+lcm)");
}

ActionChunk PolicyGenerator::generate(const ChunkRequest& req) const {
  return policy_->normalizer().denormalize(policy_->integrate(req.context, req.init_normalized, req.steps, req.counters));
}

std::optional<double> discontinuity_metric(std::span<const ActionChunk> chunks) {
  if (chunks.size() < 2) return std::nullopt;
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < chunks.size(); ++i) {
    const auto& a = chunks[i];
    const auto& b = chunks[i + 1];
    require(a.cols() == b.cols() && a.rows() >= 1 && b.rows() >= 1, "discontinuity_metric: incompatible chunks");
    total += (a.row(a.rows() - 1) - b.row(0)).norm();
  }
  return total / static_cast<double>(chunks.size() - 1);
}

EpisodeResult rollout_episode(const EpisodeTask& ep, const EvalAssets& assets, const RolloutConfig& cfg,
                              std::uint64_t seed) {
  require(assets.generator != nullptr, "rollout: no policy loaded");
  require(ep.t_ref > 0.0, "rollout: reference length must be positive");
  require(!cfg.nfe || (*cfg.nfe >= 1 && *cfg.nfe <= cfg.gpm.nfe_max), "rollout: nfe override must lie in [1, N_max]");
  const bool use_gpm = cfg.mode != InitMode::kGaussian;
  const bool use_lcm = cfg.mode == InitMode::kGpmLcm;
  if (use_gpm && (assets.head == nullptr || assets.bank == nullptr))
    throw MissingArtifact(std::string("mode ") + to_string(cfg.mode) + " needs the prior head and the memory bank");
  if (use_lcm && assets.lcm == nullptr) throw MissingArtifact("mode gpm+lcm needs the LCM checkpoint");

  const auto& task = ep.task;
  const int h = cfg.horizon;
  const int chunks = static_cast<int>(std::ceil(ep.t_ref / h));
  const auto& norm = assets.generator->normalizer();
  Rng rng(seed);
  EpisodeResult out;
  taskgen::Point pos = task.start;

  std::optional<gpm::EpisodeSession> session;
  if (use_gpm) {
    const Vector ctx0 = taskgen::featurize(task, taskgen::observe(task, pos));
    session = gpm::EpisodeSession::begin(*assets.bank, *assets.head, {ctx0.data(), static_cast<std::size_t>(ctx0.size())},
                                         cfg.gpm.session(), ep.t_ref, &out.counters);
  }
  lcm::LcmState state;
  ActionChunk prev = ActionChunk::Zero(h, taskgen::kActionDim);
  if (use_lcm) state = assets.lcm->reset_state();

  for (int j = 0; j < chunks; ++j) {
    const Vector ctx = taskgen::featurize(task, taskgen::observe(task, pos));
    TraceStep tr;
    tr.chunk = j;
    ActionChunk init;
    int steps = 0;
    if (!use_gpm) {
      init.resize(h, taskgen::kActionDim);
      for (Eigen::Index i = 0; i < init.size(); ++i) init.data()[i] = standard_normal(rng);
      steps = cfg.nfe.value_or(cfg.gpm.nfe_max);
      tr.similarity = std::nan("");
    } else {
      const auto st = session->step(h);
      ActionChunk x = gpm::sample_prior_init(st.prior, st.schedule, rng);
      if (use_lcm) {
        auto [next, bias] = assets.lcm->advance(state, prev);
        ++out.counters.lcm_calls;
        state = std::move(next);
        x = lcm::inject_bias(x, bias);
      }
      init = norm.normalize(x);
      steps = cfg.nfe.value_or(st.schedule.nfe);
      tr.progress = st.progress;
      tr.similarity = st.prior.similarity;
      tr.noise_scale = st.schedule.noise_scale;
    }
    tr.nfe = steps;
    const ActionChunk chunk =
        assets.generator->generate({{ctx.data(), static_cast<std::size_t>(ctx.size())}, init, steps, j, &out.counters});
    require(chunk.rows() == h && chunk.cols() == taskgen::kActionDim, "rollout: generator returned a bad chunk");
    out.nfe += steps;
    out.trace.push_back(tr);
    out.chunks.push_back(chunk);
    pos = chunk.row(h - 1).transpose();
    prev = chunk;
  }
  out.endpoint_error = (pos - task.goal).norm();
  out.success = out.endpoint_error < cfg.success_threshold;
  out.discontinuity = discontinuity_metric(out.chunks);
  return out;
}

std::vector<EpisodeTask> episode_tasks(const taskgen::Dataset& ds, const std::string& split, int episodes,
                                       std::uint64_t seed) {
  require(split == "seen" || split == "unseen", "split must be seen or unseen");
  require(episodes >= 1, "episodes must be positive");
  const auto pool = split == "seen" ? ds.seen_tasks() : ds.unseen_tasks();
  require(!pool.empty(), "dataset has no " + split + " tasks");
  std::vector<EpisodeTask> out;
  out.reserve(static_cast<std::size_t>(episodes));
  for (int i = 0; i < episodes; ++i) {
    const auto& rec = ds.tasks[pool[episode_seed(seed, i) % pool.size()]];
    out.push_back({rec.id, rec.descriptor, ds.reference_length(rec.descriptor.family)});
  }
  return out;
}

}  // namespace priorflow::eval
