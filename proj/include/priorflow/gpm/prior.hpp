#pragma once

#include <span>
#include <vector>

#include "priorflow/common/rng.hpp"
#include "priorflow/flow/action_chunk.hpp"
#include "priorflow/gpm/memory_bank.hpp"

namespace priorflow::gpm {

struct RetrievalWeights {
  std::vector<double> alpha;  // softmax(s / tau_s)
  double similarity = 0.0;    // sum alpha_i s_i
};

RetrievalWeights weights_and_similarity(std::span<const double> scores, double tau_s);

// Sliding window u = floor(rho * (N_chunks - 1)), rows [u*stride, u*stride + window).
Matrix extract_aligned_chunk(const MemoryEntry& entry, double rho);

// Piecewise-linear resampling of each action dimension onto `horizon` evenly
// spaced points spanning the block. A single-row block is repeated; a target
// horizon of 1 takes the first row.
ActionChunk resample_chunk(const Matrix& block, int horizon);

// Moment-matched diagonal Gaussian over an action chunk.
struct TaskPrior {
  ActionChunk mean;
  ActionChunk variance;
  double similarity = 0.0;
};

// mean = sum a_i C_i, var = max(sum a_i (C_i - mean)^2, var_floor).
TaskPrior compose_prior(std::span<const ActionChunk> chunks, std::span<const double> alpha, double var_floor);

struct ScheduleConfig {
  double lambda_min = 0.05;
  double lambda_max = 1.0;
  int nfe_min = 2;
  int nfe_max = 10;

  void validate() const;
};

struct SamplerSchedule {
  double noise_scale = 1.0;  // lambda
  int nfe = 1;               // N
};

// Similarity is clamped to [-1, 1] when it overshoots by at most 1e-6 and
// rejected beyond that.
double noise_schedule(double similarity, double lambda_min, double lambda_max);
double nfe_schedule_continuous(double similarity, int nfe_min, int nfe_max);
int nfe_schedule(double similarity, int nfe_min, int nfe_max);
SamplerSchedule make_schedule(double similarity, const ScheduleConfig& config);

// X = mean + lambda * (eps * sqrt(var)), eps ~ N(0, I) drawn in row-major order.
ActionChunk sample_prior_init(const TaskPrior& prior, const SamplerSchedule& schedule, Rng& rng);

}  // namespace priorflow::gpm
