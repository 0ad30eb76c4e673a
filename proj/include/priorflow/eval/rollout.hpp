#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "priorflow/common/counters.hpp"
#include "priorflow/flow/flow_policy.hpp"
#include "priorflow/gpm/session.hpp"
#include "priorflow/lcm/lcm.hpp"
#include "priorflow/taskgen/dataset.hpp"
#include "priorflow/train/config.hpp"

namespace priorflow::eval {

enum class InitMode { kGaussian, kGpm, kGpmLcm };
const char* to_string(InitMode m);
InitMode mode_from_string(const std::string& s);
inline constexpr InitMode kAllModes[] = {InitMode::kGaussian, InitMode::kGpm, InitMode::kGpmLcm};

struct ChunkRequest {
  std::span<const double> context;
  const ActionChunk& init_normalized;
  int steps = 1;
  int chunk_index = 0;
  CallCounters* counters = nullptr;
};

// Anything that turns a normalized start into a raw-unit action chunk.
class ChunkGenerator {
 public:
  virtual ~ChunkGenerator() = default;
  virtual const flow::Normalizer& normalizer() const = 0;
  virtual ActionChunk generate(const ChunkRequest& req) const = 0;
};

class PolicyGenerator : public ChunkGenerator {
 public:
  explicit PolicyGenerator(const flow::FlowPolicy& policy) : policy_(&policy) {}
  const flow::Normalizer& normalizer() const override { return policy_->normalizer(); }
  ActionChunk generate(const ChunkRequest& req) const override;

 private:
  const flow::FlowPolicy* policy_;
};

struct EvalAssets {
  const ChunkGenerator* generator = nullptr;
  const gpm::PriorHead* head = nullptr;
  const gpm::MemoryBank* bank = nullptr;
  const lcm::LocalConsistencyMemory* lcm = nullptr;
};

struct RolloutConfig {
  InitMode mode = InitMode::kGpmLcm;
  std::optional<int> nfe;  // overrides the adaptive or default step count
  int horizon = 8;
  double success_threshold = 0.05;
  train::GpmConfig gpm;
};

struct EpisodeTask {
  std::string task_id;
  taskgen::TaskDescriptor task;
  double t_ref = 0.0;  // executed actions per episode
};

struct TraceStep {
  int chunk = 0;
  double progress = 0.0;
  double similarity = 0.0;
  double noise_scale = 1.0;
  int nfe = 0;
};

struct EpisodeResult {
  double endpoint_error = 0.0;
  bool success = false;
  int nfe = 0;
  std::optional<double> discontinuity;
  std::vector<TraceStep> trace;
  std::vector<ActionChunk> chunks;
  CallCounters counters;
};

// Mean boundary jump ||last row of chunk i - first row of chunk i+1||; absent for fewer than two chunks.
std::optional<double> discontinuity_metric(std::span<const ActionChunk> chunks);

// Executes ceil(t_ref / H) chunks from the task's start position.
EpisodeResult rollout_episode(const EpisodeTask& task, const EvalAssets& assets, const RolloutConfig& config,
                              std::uint64_t seed);

// Episode i of a split draws its task from derive_seed(seed, i), so every mode sees the same tasks.
std::vector<EpisodeTask> episode_tasks(const taskgen::Dataset& ds, const std::string& split, int episodes,
                                       std::uint64_t seed);
inline std::uint64_t episode_seed(std::uint64_t seed, int episode) {
  return derive_seed(derive_seed(seed, "episode"), static_cast<std::uint64_t>(episode));
}
// Sampling noise for episode i; independent of the task draw.
inline std::uint64_t rollout_seed(std::uint64_t seed, int episode) {
  return derive_seed(episode_seed(seed, episode), "noise");
}

}  // namespace priorflow::eval
