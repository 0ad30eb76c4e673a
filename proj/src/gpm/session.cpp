#include "priorflow/gpm/session.hpp"

#include <algorithm>

#include "priorflow/common/errors.hpp"

namespace priorflow::gpm {

EpisodeSession EpisodeSession::begin(const MemoryBank& bank, const PriorHead& head, std::span<const double> context,
                                     const SessionConfig& config, double t_ref, CallCounters* counters,
                                     std::optional<std::size_t> exclude) {
  return begin_with_query(bank, head.embed(context), config, t_ref, counters, exclude);
}

EpisodeSession EpisodeSession::begin_with_query(const MemoryBank& bank, const TaskEmbedding& query,
                                                const SessionConfig& config, double t_ref, CallCounters* counters,
                                                std::optional<std::size_t> exclude) {
  require(t_ref > 0.0, "session: reference episode length must be positive");
  config.schedule.validate();
  EpisodeSession s;
  s.bank_ = &bank;
  s.config_ = config;
  s.t_ref_ = t_ref;
  s.hits_ = bank.retrieve_topk(query, config.k, exclude, counters);
  std::vector<double> scores;
  scores.reserve(s.hits_.size());
  for (const auto& h : s.hits_) scores.push_back(h.score);
  s.weights_ = weights_and_similarity(scores, config.tau_s);
  s.schedule_ = make_schedule(s.weights_.similarity, config.schedule);
  return s;
}

TaskPrior EpisodeSession::prior_at(double rho, int horizon) const {
  std::vector<ActionChunk> chunks;
  chunks.reserve(hits_.size());
  for (const auto& h : hits_) chunks.push_back(resample_chunk(extract_aligned_chunk(bank_->entry(h.index), rho), horizon));
  TaskPrior prior = compose_prior(chunks, weights_.alpha, config_.var_floor);
  prior.similarity = weights_.similarity;
  return prior;
}

SessionStep EpisodeSession::step(int horizon) {
  require(horizon >= 1, "session step: horizon must be >= 1");
  SessionStep out;
  out.progress = progress_;
  out.prior = prior_at(progress_, horizon);
  out.schedule = schedule_;
  ++steps_;
  executed_ += static_cast<double>(horizon);
  progress_ = std::min(1.0, executed_ / t_ref_);
  return out;
}

}  // namespace priorflow::gpm
