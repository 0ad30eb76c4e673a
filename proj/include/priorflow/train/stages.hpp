#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "priorflow/flow/flow_policy.hpp"
#include "priorflow/gpm/memory_bank.hpp"
#include "priorflow/gpm/prior_head.hpp"
#include "priorflow/lcm/lcm.hpp"
#include "priorflow/taskgen/dataset.hpp"
#include "priorflow/train/config.hpp"

namespace priorflow::train {

struct TrainLogRow {
  std::int64_t step = 0;  // last step of the interval
  double loss = 0.0;      // mean loss over the interval
  double lr = 0.0;
  double elapsed_s = 0.0;
};

struct TrainLog {
  std::string stage;
  std::uint64_t seed = 0;
  std::vector<TrainLogRow> rows;

  double first_loss() const { return rows.empty() ? 0.0 : rows.front().loss; }
  double last_loss() const { return rows.empty() ? 0.0 : rows.back().loss; }
  std::string to_csv() const;
  void write(const std::filesystem::path& path) const;
};

// ---------------------------------------------------------------- stage 1

// One stage-1 regression pair: context at the chunk start and the H x A target.
struct ChunkExample {
  Vector context;
  ActionChunk target;
};

// Every chunk start of every training demonstration; the tail is padded with the last row.
std::vector<ChunkExample> chunk_examples(const taskgen::Dataset& ds, taskgen::Split split, int horizon);
ActionChunk chunk_at(const Matrix& trajectory, int start, int horizon);

flow::FlowPolicy make_policy(const taskgen::Dataset& ds, const PipelineConfig& cfg);
flow::FlowPolicy stage1_train(const taskgen::Dataset& ds, const PipelineConfig& cfg, TrainLog* log = nullptr);

// ---------------------------------------------------------------- stage 2

struct PairItem {
  std::size_t demo = 0;
  std::size_t task = 0;
  int step = 0;  // context is taken at this step of the demonstration
};

// Each batch draws batch_size / 2 tasks (distinct while enough tasks exist) and
// two distinct demonstrations of each, so every anchor has an in-batch positive.
class TaskPairSampler {
 public:
  TaskPairSampler(const taskgen::Dataset& ds, taskgen::Split split, int batch_size, std::uint64_t seed);

  std::vector<PairItem> next();
  const std::vector<std::size_t>& tasks() const { return tasks_; }

 private:
  const taskgen::Dataset* ds_;
  int batch_size_;
  Rng rng_;
  std::vector<std::size_t> tasks_;
  std::vector<std::vector<std::size_t>> demos_by_task_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

inline TaskPairSampler task_pair_batches(const taskgen::Dataset& ds, int batch_size, std::uint64_t seed) {
  return TaskPairSampler(ds, taskgen::Split::kTrain, batch_size, seed);
}

Matrix batch_contexts(const taskgen::Dataset& ds, const std::vector<PairItem>& batch);
std::vector<std::size_t> batch_labels(const std::vector<PairItem>& batch);

// Supervised InfoNCE over unit-norm rows of `z`: for anchor i the positives are
// the other rows with the same label and the candidates are all other rows.
// Anchors without a positive are left out of the mean.
nn::Var infonce_graph(nn::Tape& tape, nn::Var z, const std::vector<std::size_t>& labels, double tau_c);
nn::GradientReport infonce_loss(const gpm::PriorHead& head, const Matrix& contexts,
                                const std::vector<std::size_t>& labels, double tau_c);

gpm::PriorHead make_prior_head(const PipelineConfig& cfg);
gpm::PriorHead stage2_train(const taskgen::Dataset& ds, const PipelineConfig& cfg, TrainLog* log = nullptr);

// Episode key: head embedding of the mean-pooled per-step contexts.
gpm::TaskEmbedding episode_key(const gpm::PriorHead& head, const Matrix& contexts);

struct Separation {
  double intra = 0.0;
  double inter = 0.0;
  double margin() const { return intra - inter; }
};
Separation embedding_separation(const gpm::PriorHead& head, const taskgen::Dataset& ds, taskgen::Split split);

// ---------------------------------------------------------------- memory bank

// One entry per training demonstration, in dataset order.
gpm::MemoryBank build_memory_bank(const taskgen::Dataset& ds, const gpm::PriorHead& head, const GpmConfig& cfg);
// Dataset indices of the demonstrations stored in the bank, in bank order.
std::vector<std::size_t> bank_demo_indices(const taskgen::Dataset& ds);

// ---------------------------------------------------------------- stage 3

// Replays an evaluation session along each training demonstration (leaving the
// demonstration's own bank entry out) and pairs ground-truth previous chunks
// with residual targets against the session prior.
std::vector<lcm::LcmRollout> lcm_rollouts(const taskgen::Dataset& ds, const gpm::PriorHead& head,
                                          const gpm::MemoryBank& bank, const PipelineConfig& cfg);

lcm::LocalConsistencyMemory make_lcm(const PipelineConfig& cfg);
lcm::LocalConsistencyMemory stage3_train(const std::vector<lcm::LcmRollout>& rollouts, const PipelineConfig& cfg,
                                         TrainLog* log = nullptr);

}  // namespace priorflow::train
