#include "priorflow/gpm/prior.hpp"

#include <algorithm>
#include <cmath>

#include "priorflow/common/errors.hpp"
#include "priorflow/common/log.hpp"

namespace priorflow::gpm {

RetrievalWeights weights_and_similarity(std::span<const double> scores, double tau_s) {
  require(!scores.empty(), "weights_and_similarity: no scores");
  require(tau_s > 0.0 && std::isfinite(tau_s), "weights_and_similarity: temperature must be positive");
  double mx = -INFINITY;
  for (double s : scores) {
    require(std::isfinite(s), "weights_and_similarity: non-finite score");
    mx = std::max(mx, s);
  }
  RetrievalWeights out;
  out.alpha.resize(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out.alpha[i] = std::exp((scores[i] - mx) / tau_s);
    z += out.alpha[i];
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out.alpha[i] /= z;
    out.similarity += out.alpha[i] * scores[i];
  }
  return out;
}

Matrix extract_aligned_chunk(const MemoryEntry& entry, double rho) {
  require(rho >= 0.0 && rho <= 1.0, "extract_aligned_chunk: progress must lie in [0, 1]");
  require(entry.length() >= entry.window && entry.window >= 1 && entry.stride >= 1,
          "extract_aligned_chunk: invalid entry");
  const int windows = entry.num_windows();
  const int u = static_cast<int>(std::floor(rho * static_cast<double>(windows - 1)));
  return entry.trajectory.middleRows(static_cast<Eigen::Index>(u) * entry.stride, entry.window);
}

ActionChunk resample_chunk(const Matrix& block, int horizon) {
  require(block.rows() >= 1 && block.cols() >= 1, "resample_chunk: empty block");
  require(horizon >= 1, "resample_chunk: horizon must be >= 1");
  const Eigen::Index src = block.rows();
  if (src == horizon) return block;
  ActionChunk out(horizon, block.cols());
  if (src == 1) {
    for (int i = 0; i < horizon; ++i) out.row(i) = block.row(0);
    return out;
  }
  if (horizon == 1) return block.topRows(1);
  const double span = static_cast<double>(src - 1) / static_cast<double>(horizon - 1);
  for (int i = 0; i < horizon; ++i) {
    const double pos = static_cast<double>(i) * span;
    const auto lo = std::min<Eigen::Index>(static_cast<Eigen::Index>(std::floor(pos)), src - 1);
    const double frac = pos - static_cast<double>(lo);
    if (lo >= src - 1 || frac == 0.0) {
      out.row(i) = block.row(lo);
    } else {
      out.row(i) = (1.0 - frac) * block.row(lo) + frac * block.row(lo + 1);
    }
  }
  return out;
}

TaskPrior compose_prior(std::span<const ActionChunk> chunks, std::span<const double> alpha, double var_floor) {
  require(!chunks.empty(), "compose_prior: no chunks");
  require(chunks.size() == alpha.size(), "compose_prior: one weight per chunk required");
  require(var_floor > 0.0, "compose_prior: variance floor must be positive");
  double total = 0.0;
  for (double a : alpha) total += a;
  require(std::abs(total - 1.0) <= 1e-9, "compose_prior: weights must sum to 1");
  for (const auto& c : chunks) check_same_shape(c, chunks.front(), "compose_prior");

  TaskPrior prior;
  prior.mean = ActionChunk::Zero(chunks.front().rows(), chunks.front().cols());
  for (std::size_t i = 0; i < chunks.size(); ++i) prior.mean += alpha[i] * chunks[i];
  prior.variance = ActionChunk::Zero(prior.mean.rows(), prior.mean.cols());
  for (std::size_t i = 0; i < chunks.size(); ++i)
    prior.variance += alpha[i] * (chunks[i] - prior.mean).cwiseAbs2();
  prior.variance = prior.variance.cwiseMax(var_floor);
  return prior;
}

void ScheduleConfig::validate() const {
  require(lambda_min >= 0.0 && lambda_min <= lambda_max, "schedule: need 0 <= lambda_min <= lambda_max");
  require(nfe_min >= 1 && nfe_min <= nfe_max, "schedule: need 1 <= nfe_min <= nfe_max");
}

namespace {
// Confidence weight (s + 1) / 2 in [0, 1].
double confidence(double similarity) {
  if (!std::isfinite(similarity) || similarity < -1.0 - 1e-6 || similarity > 1.0 + 1e-6)
    throw InvalidInput("schedule: similarity " + std::to_string(similarity) + " outside [-1, 1]");
  if (similarity < -1.0 || similarity > 1.0) {
    log_warning("schedule: clamping similarity " + std::to_string(similarity) + " into [-1, 1]");
    similarity = std::clamp(similarity, -1.0, 1.0);
  }
  return (similarity + 1.0) / 2.0;
}
}  // namespace

double noise_schedule(double similarity, double lambda_min, double lambda_max) {
  require(lambda_min <= lambda_max, "noise_schedule: lambda_min > lambda_max");
  const double w = confidence(similarity);
  // lambda_max - w (lambda_max - lambda_min), written as a convex combination so both ends are exact.
  return w * lambda_min + (1.0 - w) * lambda_max;
}

double nfe_schedule_continuous(double similarity, int nfe_min, int nfe_max) {
  require(nfe_min >= 1 && nfe_min <= nfe_max, "nfe_schedule: need 1 <= nfe_min <= nfe_max");
  const double w = confidence(similarity);
  return static_cast<double>(nfe_min) + (1.0 - w) * static_cast<double>(nfe_max - nfe_min);
}

int nfe_schedule(double similarity, int nfe_min, int nfe_max) {
  const double n = std::round(nfe_schedule_continuous(similarity, nfe_min, nfe_max));
  return std::clamp(static_cast<int>(n), nfe_min, nfe_max);
}

SamplerSchedule make_schedule(double similarity, const ScheduleConfig& config) {
  config.validate();
  return {noise_schedule(similarity, config.lambda_min, config.lambda_max),
          nfe_schedule(similarity, config.nfe_min, config.nfe_max)};
}

ActionChunk sample_prior_init(const TaskPrior& prior, const SamplerSchedule& schedule, Rng& rng) {
  check_same_shape(prior.mean, prior.variance, "sample_prior_init");
  ActionChunk x = prior.mean;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double eps = normal(rng);
    x.data()[i] += schedule.noise_scale * (eps * std::sqrt(prior.variance.data()[i]));
  }
  return x;
}

}  // namespace priorflow::gpm
