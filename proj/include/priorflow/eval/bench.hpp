#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "priorflow/eval/rollout.hpp"

namespace priorflow::eval {

struct EpisodeBatch {
  std::vector<EpisodeTask> tasks;
  std::vector<EpisodeResult> results;
  double wall_s = 0.0;
};

// Runs every task with rollout seed rollout_seed(seed, i). Results land in slot i.
EpisodeBatch run_episodes(const std::vector<EpisodeTask>& tasks, const EvalAssets& assets, const RolloutConfig& config,
                          std::uint64_t seed);

struct EvalSummary {
  std::string mode;
  std::string nfe;  // "adaptive" or the fixed step count
  std::string split;
  int episodes = 0;
  double mean_error = 0.0;
  double median_error = 0.0;
  double success_rate = 0.0;
  double mean_nfe = 0.0;            // per episode
  double mean_nfe_per_chunk = 0.0;
  double median_discontinuity = 0.0;
  double threshold = 0.0;
};

EvalSummary summarize(const EpisodeBatch& batch, const RolloutConfig& config, const std::string& split);
double median(std::vector<double> v);

struct SweepCell {
  InitMode mode = InitMode::kGaussian;
  std::optional<int> nfe;
};

// Gaussian-init at fixed N, prior modes at adaptive and fixed N. Always contains the
// (gpm-init, adaptive) and (gaussian-init, N_max) cells.
std::vector<SweepCell> default_grid(const train::GpmConfig& gpm);

struct SweepRow {
  EvalSummary summary;
  double wall_s = 0.0;
  double wall_per_chunk_ms = 0.0;
};

struct SweepReport {
  std::vector<SweepRow> rows;
};

// Every cell runs the same task list and rollout seed ladder.
SweepReport sweep(const std::vector<SweepCell>& grid, const taskgen::Dataset& ds, const std::string& split,
                  int episodes, const EvalAssets& assets, const RolloutConfig& base, std::uint64_t seed);

inline constexpr const char* kSweepSchema = "# schema: priorflow-sweep/1";
inline constexpr const char* kTimingSchema = "# schema: priorflow-timing/1";
inline constexpr const char* kAblationSchema = "# schema: priorflow-ablation/1";

// Deterministic given (grid, seeds, artifacts); wall-clock goes to timing_csv only.
std::string sweep_csv(const SweepReport& report);
std::string timing_csv(const SweepReport& report);

// Fixed row order: split in {seen, unseen}, then gaussian-init, gpm-init, gpm+lcm.
std::vector<EvalSummary> ablation_report(const taskgen::Dataset& ds, int episodes, const EvalAssets& assets,
                                         const RolloutConfig& base, std::uint64_t seed);
std::string ablation_csv(const std::vector<EvalSummary>& rows);

// One JSON object per executed chunk.
void write_trace_jsonl(std::ostream& os, const EpisodeBatch& batch, InitMode mode);

}  // namespace priorflow::eval
