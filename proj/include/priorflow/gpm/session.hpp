#pragma once

#include <optional>
#include <span>
#include <vector>

#include "priorflow/common/counters.hpp"
#include "priorflow/gpm/memory_bank.hpp"
#include "priorflow/gpm/prior.hpp"
#include "priorflow/gpm/prior_head.hpp"

namespace priorflow::gpm {

struct SessionConfig {
  std::size_t k = 8;
  double tau_s = 0.1;
  double var_floor = 1e-4;
  ScheduleConfig schedule;
};

struct SessionStep {
  TaskPrior prior;
  SamplerSchedule schedule;
  double progress = 0.0;  // rho used for this step
};

// Per-episode retrieval cache. Retrieval happens once in begin(); each step
// gathers progress-aligned windows from the cached neighbors and advances the
// progress scalar by horizon / t_ref.
class EpisodeSession {
 public:
  static EpisodeSession begin(const MemoryBank& bank, const PriorHead& head, std::span<const double> context,
                              const SessionConfig& config, double t_ref, CallCounters* counters = nullptr,
                              std::optional<std::size_t> exclude = std::nullopt);
  static EpisodeSession begin_with_query(const MemoryBank& bank, const TaskEmbedding& query,
                                         const SessionConfig& config, double t_ref,
                                         CallCounters* counters = nullptr,
                                         std::optional<std::size_t> exclude = std::nullopt);

  SessionStep step(int horizon);
  // Prior at an arbitrary progress value, without advancing.
  TaskPrior prior_at(double rho, int horizon) const;

  const std::vector<RetrievalHit>& hits() const { return hits_; }
  const RetrievalWeights& weights() const { return weights_; }
  double similarity() const { return weights_.similarity; }
  SamplerSchedule schedule() const { return schedule_; }
  double progress() const { return progress_; }
  int steps_taken() const { return steps_; }
  double t_ref() const { return t_ref_; }

 private:
  EpisodeSession() = default;

  const MemoryBank* bank_ = nullptr;
  SessionConfig config_;
  std::vector<RetrievalHit> hits_;
  RetrievalWeights weights_;
  SamplerSchedule schedule_;
  double t_ref_ = 1.0;
  double executed_ = 0.0;
  double progress_ = 0.0;
  int steps_ = 0;
};

}  // namespace priorflow::gpm
