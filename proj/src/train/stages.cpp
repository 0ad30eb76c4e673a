#include "priorflow/train/stages.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>

#include "priorflow/common/binary_io.hpp"
#include "priorflow/common/errors.hpp"
#include "priorflow/common/log.hpp"
#include "priorflow/nn/adamw.hpp"

namespace priorflow::train {

namespace {

using taskgen::Dataset;
using taskgen::Split;
using Clock = std::chrono::steady_clock;

// Accumulates per-step losses and emits one TrainLog row per interval.
class IntervalLogger {
 public:
  IntervalLogger(TrainLog* log, std::string stage, std::uint64_t seed, int every)
      : log_(log), every_(every), start_(Clock::now()) {
    if (log_) {
      log_->stage = std::move(stage);
      log_->seed = seed;
      log_->rows.clear();
    }
  }

  void record(int step, double loss, double lr, bool last) {
    sum_ += loss;
    ++count_;
    if ((step + 1) % every_ == 0 || last) {
      if (log_) {
        const double elapsed = std::chrono::duration<double>(Clock::now() - start_).count();
        log_->rows.push_back({step, sum_ / count_, lr, elapsed});
      }
      sum_ = 0.0;
      count_ = 0;
    }
  }

 private:
  TrainLog* log_;
  int every_;
  Clock::time_point start_;
  double sum_ = 0.0;
  int count_ = 0;
};

template <typename Fn>
auto guarded(const char* stage, int step, Fn&& fn) {
  try {
    return fn();
  } catch (const NonFiniteError& e) {
    throw Divergence(std::string(stage) + " diverged at step " + std::to_string(step) + ": " + e.what());
  }
}

nn::AdamWConfig adamw_for(const OptimConfig& c, int step) {
  nn::AdamWConfig a;
  a.lr = c.lr_at(step);
  a.weight_decay = c.weight_decay;
  return a;
}

std::size_t pick(Rng& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

}  // namespace

std::string TrainLog::to_csv() const {
  std::string out = "stage,seed,step,loss,lr,elapsed_s\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%llu,%lld,%.9g,%.6g,%.3f\n", stage.c_str(),
                  static_cast<unsigned long long>(seed), static_cast<long long>(r.step), r.loss, r.lr, r.elapsed_s);
    out += buf;
  }
  return out;
}

void TrainLog::write(const std::filesystem::path& path) const { io::write_file(path, to_csv()); }

// ---------------------------------------------------------------- stage 1

ActionChunk chunk_at(const Matrix& trajectory, int start, int horizon) {
  require(start >= 0 && start < trajectory.rows(), "chunk_at: start outside the trajectory");
  ActionChunk c(horizon, trajectory.cols());
  for (int i = 0; i < horizon; ++i)
    c.row(i) = trajectory.row(std::min<Eigen::Index>(start + i, trajectory.rows() - 1));
  return c;
}

std::vector<ChunkExample> chunk_examples(const Dataset& ds, Split split, int horizon) {
  std::vector<ChunkExample> out;
  for (std::size_t i : ds.demos_in(split)) {
    const auto& d = ds.demos[i];
    const Matrix ctx = ds.contexts(d);
    for (int s = 0; s < d.trajectory.rows(); ++s)
      out.push_back({ctx.row(s).transpose(), chunk_at(d.trajectory, s, horizon)});
  }
  return out;
}

flow::FlowPolicy make_policy(const Dataset& ds, const PipelineConfig& cfg) {
  flow::FlowPolicySpec spec;
  spec.horizon = cfg.horizon;
  spec.action_dim = taskgen::kActionDim;
  spec.context_dim = taskgen::kContextDim;
  spec.hidden = cfg.stage1.hidden;
  spec.linear_skip = cfg.stage1.linear_skip;
  flow::FlowPolicy policy(spec, derive_seed(cfg.seed, "stage1/init"));
  policy.set_suite_fingerprint(ds.fingerprint());
  return policy;
}

flow::FlowPolicy stage1_train(const Dataset& ds, const PipelineConfig& cfg, TrainLog* log) {
  cfg.validate();
  const auto examples = chunk_examples(ds, Split::kTrain, cfg.horizon);
  require(!examples.empty(), "stage1: no training demonstrations");
  flow::FlowPolicy policy = make_policy(ds, cfg);
  std::vector<ActionChunk> targets;
  targets.reserve(examples.size());
  for (const auto& e : examples) targets.push_back(e.target);
  policy.set_normalizer(flow::Normalizer::fit(targets));

  const auto& sc = cfg.stage1;
  Rng rng(derive_seed(cfg.seed, "stage1"));
  IntervalLogger logger(log, "stage1", cfg.seed, sc.log_every);
  std::vector<flow::CfmExample> batch(static_cast<std::size_t>(sc.batch_size));
  for (int step = 0; step < sc.steps; ++step) {
    for (auto& b : batch) {
      const auto& ex = examples[pick(rng, examples.size())];
      b.context = ex.context;
      b.x1 = policy.normalizer().normalize(ex.target);
      b.x0.resize(cfg.horizon, taskgen::kActionDim);
      for (Eigen::Index i = 0; i < b.x0.size(); ++i) b.x0.data()[i] = standard_normal(rng);
      b.t = uniform(rng, 0.0, 1.0);
    }
    const auto report = guarded("stage1", step, [&] { return flow::cfm_loss(policy, batch); });
    const auto opt = adamw_for(sc, step);
    guarded("stage1", step, [&] {
      nn::adamw_step(policy.params_mut(), report, opt);
      return 0;
    });
    logger.record(step, report.loss, opt.lr, step + 1 == sc.steps);
  }
  return policy;
}

// ---------------------------------------------------------------- stage 2

TaskPairSampler::TaskPairSampler(const Dataset& ds, Split split, int batch_size, std::uint64_t seed)
    : ds_(&ds), batch_size_(batch_size), rng_(seed) {
  require(batch_size >= 2 && batch_size % 2 == 0, "task_pair_batches: batch size must be even and >= 2");
  std::vector<std::vector<std::size_t>> by_task(ds.tasks.size());
  for (std::size_t i : ds.demos_in(split)) by_task[ds.demos[i].task].push_back(i);
  for (std::size_t t = 0; t < by_task.size(); ++t) {
    if (by_task[t].empty()) continue;
    if (by_task[t].size() < 2) {
      log_warning("task_pair_batches: task " + ds.tasks[t].id + " has a single demonstration and is excluded");
      continue;
    }
    tasks_.push_back(t);
    demos_by_task_.push_back(by_task[t]);
  }
  require(!tasks_.empty(), "task_pair_batches: no task has two demonstrations");
  order_.resize(tasks_.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), rng_);
}

std::vector<PairItem> TaskPairSampler::next() {
  std::vector<PairItem> batch;
  batch.reserve(static_cast<std::size_t>(batch_size_));
  for (int p = 0; p < batch_size_ / 2; ++p) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    const std::size_t slot = order_[cursor_++];
    const auto& demos = demos_by_task_[slot];
    const std::size_t a = pick(rng_, demos.size());
    std::size_t b = pick(rng_, demos.size() - 1);
    if (b >= a) ++b;
    for (std::size_t d : {demos[a], demos[b]}) {
      const int length = static_cast<int>(ds_->demos[d].trajectory.rows());
      batch.push_back({d, tasks_[slot], static_cast<int>(pick(rng_, static_cast<std::size_t>(length)))});
    }
  }
  return batch;
}

Matrix batch_contexts(const Dataset& ds, const std::vector<PairItem>& batch) {
  Matrix out(static_cast<Eigen::Index>(batch.size()), taskgen::kContextDim);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& d = ds.demos[batch[i].demo];
    const auto& task = ds.task_of(d).descriptor;
    const taskgen::Point pos =
        batch[i].step == 0 ? task.start : taskgen::Point(d.trajectory.row(batch[i].step - 1).transpose());
    out.row(static_cast<Eigen::Index>(i)) = taskgen::featurize(task, taskgen::observe(task, pos)).transpose();
  }
  return out;
}

std::vector<std::size_t> batch_labels(const std::vector<PairItem>& batch) {
  std::vector<std::size_t> out;
  out.reserve(batch.size());
  for (const auto& b : batch) out.push_back(b.task);
  return out;
}

nn::Var infonce_graph(nn::Tape& tape, nn::Var z, const std::vector<std::size_t>& labels, double tau_c) {
  require(tau_c > 0.0, "infonce: temperature must be positive");
  const auto n = static_cast<Eigen::Index>(labels.size());
  require(tape.value(z).rows() == n, "infonce: one label per embedding required");
  Matrix candidates = Matrix::Ones(n, n);
  Matrix positives = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    candidates(i, i) = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i && labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) positives(i, j) = 1.0;
  }
  Matrix weights = Matrix::Zero(n, 1);
  int valid = 0;
  for (Eigen::Index i = 0; i < n; ++i) valid += positives.row(i).sum() > 0.0;
  require(valid > 0, "infonce: no anchor has a positive");
  for (Eigen::Index i = 0; i < n; ++i)
    if (positives.row(i).sum() > 0.0) weights(i, 0) = 1.0 / valid;
  const nn::Var sim = tape.affine(tape.matmul_nt(z, z), 1.0 / tau_c, 0.0);
  const nn::Var all = tape.masked_logsumexp_rows(sim, std::move(candidates));
  const nn::Var pos = tape.masked_logsumexp_rows(sim, std::move(positives));
  return tape.sub(tape.weighted_sum(all, weights), tape.weighted_sum(pos, weights));
}

nn::GradientReport infonce_loss(const gpm::PriorHead& head, const Matrix& contexts,
                                const std::vector<std::size_t>& labels, double tau_c) {
  nn::Tape tape;
  const nn::Var z = head.embed_graph(tape, tape.constant(contexts));
  return tape.backward(infonce_graph(tape, z, labels, tau_c));
}

gpm::PriorHead make_prior_head(const PipelineConfig& cfg) {
  return gpm::PriorHead({taskgen::kContextDim, cfg.stage2.hidden, cfg.stage2.embed_dim},
                        derive_seed(cfg.seed, "stage2/init"));
}

gpm::PriorHead stage2_train(const Dataset& ds, const PipelineConfig& cfg, TrainLog* log) {
  cfg.validate();
  gpm::PriorHead head = make_prior_head(cfg);
  const auto& sc = cfg.stage2;
  TaskPairSampler sampler(ds, Split::kTrain, sc.batch_size, derive_seed(cfg.seed, "stage2"));
  IntervalLogger logger(log, "stage2", cfg.seed, sc.log_every);
  for (int step = 0; step < sc.steps; ++step) {
    const auto batch = sampler.next();
    const auto report =
        guarded("stage2", step, [&] { return infonce_loss(head, batch_contexts(ds, batch), batch_labels(batch), sc.tau_c); });
    const auto opt = adamw_for(sc, step);
    guarded("stage2", step, [&] {
      nn::adamw_step(head.params_mut(), report, opt);
      return 0;
    });
    logger.record(step, report.loss, opt.lr, step + 1 == sc.steps);
  }
  return head;
}

gpm::TaskEmbedding episode_key(const gpm::PriorHead& head, const Matrix& contexts) {
  require(contexts.rows() >= 1, "episode_key: no contexts");
  const Vector pooled = contexts.colwise().mean().transpose();
  return head.embed({pooled.data(), static_cast<std::size_t>(pooled.size())});
}

Separation embedding_separation(const gpm::PriorHead& head, const Dataset& ds, Split split) {
  const auto idx = ds.demos_in(split);
  std::vector<gpm::TaskEmbedding> keys;
  for (std::size_t i : idx) keys.push_back(episode_key(head, ds.contexts(ds.demos[i])));
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = a + 1; b < idx.size(); ++b) {
      const double s = keys[a].dot(keys[b]);
      if (ds.demos[idx[a]].task == ds.demos[idx[b]].task) {
        intra += s;
        ++n_intra;
      } else {
        inter += s;
        ++n_inter;
      }
    }
  require(n_intra > 0 && n_inter > 0, "embedding_separation: need two tasks with two demonstrations each");
  return {intra / static_cast<double>(n_intra), inter / static_cast<double>(n_inter)};
}

// ---------------------------------------------------------------- memory bank

std::vector<std::size_t> bank_demo_indices(const Dataset& ds) { return ds.demos_in(Split::kTrain); }

gpm::MemoryBank build_memory_bank(const Dataset& ds, const gpm::PriorHead& head, const GpmConfig& cfg) {
  cfg.validate();
  const auto idx = bank_demo_indices(ds);
  require(!idx.empty(), "build_memory_bank: dataset has no training demonstrations");
  gpm::MemoryBank bank({head.spec().embed_dim, taskgen::kActionDim, cfg.window, cfg.stride});
  for (std::size_t i : idx) {
    const auto& d = ds.demos[i];
    gpm::MemoryEntry e;
    e.key = episode_key(head, ds.contexts(d));
    e.trajectory = d.trajectory;
    e.window = cfg.window;
    e.stride = cfg.stride;
    e.task_id = ds.task_of(d).id;
    bank.insert(std::move(e));
  }
  return bank;
}

// ---------------------------------------------------------------- stage 3

std::vector<lcm::LcmRollout> lcm_rollouts(const Dataset& ds, const gpm::PriorHead& head, const gpm::MemoryBank& bank,
                                          const PipelineConfig& cfg) {
  const auto idx = bank_demo_indices(ds);
  require(idx.size() == bank.size(), "lcm_rollouts: bank does not match the dataset's training demonstrations");
  const auto session_cfg = cfg.gpm.session();
  const int h = cfg.horizon;
  std::vector<lcm::LcmRollout> out;
  out.reserve(idx.size());
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& d = ds.demos[idx[b]];
    const Matrix ctx = ds.contexts(d);
    const double t_ref = ds.reference_length(ds.task_of(d).descriptor.family);
    auto session = gpm::EpisodeSession::begin(bank, head, {ctx.row(0).data(), static_cast<std::size_t>(ctx.cols())},
                                              session_cfg, t_ref, nullptr, b);
    const int chunks = static_cast<int>(std::ceil(t_ref / h));
    lcm::LcmRollout rollout;
    for (int j = 0; j < chunks; ++j) {
      const auto step = session.step(h);
      const int start = std::min<int>(j * h, static_cast<int>(d.trajectory.rows()) - 1);
      const ActionChunk prev = j == 0 ? ActionChunk(ActionChunk::Zero(h, taskgen::kActionDim))
                                      : chunk_at(d.trajectory, std::min<int>((j - 1) * h, start), h);
      rollout.push_back({prev, lcm::residual_target(chunk_at(d.trajectory, start, h), step.prior.mean)});
    }
    out.push_back(std::move(rollout));
  }
  return out;
}

lcm::LocalConsistencyMemory make_lcm(const PipelineConfig& cfg) {
  return lcm::LocalConsistencyMemory(
      {cfg.horizon, taskgen::kActionDim, cfg.stage3.feature_dim, cfg.stage3.state_dim, cfg.stage3.p_cold},
      derive_seed(cfg.seed, "stage3/init"));
}

lcm::LocalConsistencyMemory stage3_train(const std::vector<lcm::LcmRollout>& rollouts, const PipelineConfig& cfg,
                                         TrainLog* log) {
  cfg.validate();
  require(!rollouts.empty(), "stage3: no rollouts");
  lcm::LocalConsistencyMemory model = make_lcm(cfg);
  const auto& sc = cfg.stage3;
  Rng rng(derive_seed(cfg.seed, "stage3"));
  IntervalLogger logger(log, "stage3", cfg.seed, sc.log_every);
  std::vector<lcm::LcmRollout> batch(static_cast<std::size_t>(sc.batch_size));
  for (int step = 0; step < sc.steps; ++step) {
    for (auto& b : batch) b = rollouts[pick(rng, rollouts.size())];
    const auto mask = lcm::draw_cold_mask(batch, sc.p_cold, rng);
    const auto report = guarded("stage3", step, [&] { return lcm::lcm_loss(model, batch, mask); });
    const auto opt = adamw_for(sc, step);
    guarded("stage3", step, [&] {
      nn::adamw_step(model.params_mut(), report, opt);
      return 0;
    });
    logger.record(step, report.loss, opt.lr, step + 1 == sc.steps);
  }
  return model;
}

}  // namespace priorflow::train
