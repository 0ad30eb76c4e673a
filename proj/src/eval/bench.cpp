#include "priorflow/eval/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "priorflow/common/errors.hpp"

namespace priorflow::eval {

namespace {

std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string nfe_label(const std::optional<int>& n) { return n ? std::to_string(*n) : "adaptive"; }

}  // namespace

double median(std::vector<double> v) {
  require(!v.empty(), "median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

EpisodeBatch run_episodes(const std::vector<EpisodeTask>& tasks, const EvalAssets& assets, const RolloutConfig& config,
                          std::uint64_t seed) {
  EpisodeBatch batch;
  batch.tasks = tasks;
  batch.results.resize(tasks.size());
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < tasks.size(); ++i)
    batch.results[i] = rollout_episode(tasks[i], assets, config, rollout_seed(seed, static_cast<int>(i)));
  batch.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return batch;
}

EvalSummary summarize(const EpisodeBatch& batch, const RolloutConfig& config, const std::string& split) {
  require(!batch.results.empty(), "summarize: no episodes");
  EvalSummary s;
  s.mode = to_string(config.mode);
  s.nfe = config.mode == InitMode::kGaussian ? std::to_string(config.nfe.value_or(config.gpm.nfe_max))
                                             : nfe_label(config.nfe);
  s.split = split;
  s.episodes = static_cast<int>(batch.results.size());
  s.threshold = config.success_threshold;
  std::vector<double> errors, disc;
  double chunks = 0.0;
  int successes = 0;
  for (const auto& r : batch.results) {
    errors.push_back(r.endpoint_error);
    s.mean_error += r.endpoint_error;
    s.mean_nfe += r.nfe;
    chunks += static_cast<double>(r.chunks.size());
    successes += r.success ? 1 : 0;
    if (r.discontinuity) disc.push_back(*r.discontinuity);
  }
  const double n = static_cast<double>(s.episodes);
  s.mean_error /= n;
  s.median_error = median(errors);
  s.success_rate = successes / n;
  s.mean_nfe_per_chunk = s.mean_nfe / chunks;
  s.mean_nfe /= n;
  s.median_discontinuity = disc.empty() ? std::nan("") : median(disc);
  return s;
}

std::vector<SweepCell> default_grid(const train::GpmConfig& gpm) {
  std::vector<SweepCell> grid;
  std::vector<int> fixed;
  for (int n : {1, 2, 4, 6, 8, gpm.nfe_max})
    if (n <= gpm.nfe_max && std::find(fixed.begin(), fixed.end(), n) == fixed.end()) fixed.push_back(n);
  for (int n : fixed) grid.push_back({InitMode::kGaussian, n});
  for (InitMode m : {InitMode::kGpm, InitMode::kGpmLcm}) {
    grid.push_back({m, std::nullopt});
    for (int n : fixed) grid.push_back({m, n});
  }
  return grid;
}

SweepReport sweep(const std::vector<SweepCell>& grid, const taskgen::Dataset& ds, const std::string& split,
                  int episodes, const EvalAssets& assets, const RolloutConfig& base, std::uint64_t seed) {
  require(!grid.empty(), "sweep: empty grid");
  const auto tasks = episode_tasks(ds, split, episodes, seed);
  SweepReport report;
  for (const auto& cell : grid) {
    RolloutConfig cfg = base;
    cfg.mode = cell.mode;
    cfg.nfe = cell.nfe;
    const auto batch = run_episodes(tasks, assets, cfg, seed);
    SweepRow row;
    row.summary = summarize(batch, cfg, split);
    row.wall_s = batch.wall_s;
    double chunks = 0.0;
    for (const auto& r : batch.results) chunks += static_cast<double>(r.chunks.size());
    row.wall_per_chunk_ms = 1e3 * batch.wall_s / chunks;
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string sweep_csv(const SweepReport& report) {
  std::string out = std::string(kSweepSchema) + "\n";
  out += "mode,nfe,split,episodes,mean_error,median_error,success_rate,mean_nfe,mean_nfe_per_chunk,"
         "median_discontinuity,threshold\n";
  for (const auto& row : report.rows) {
    const auto& s = row.summary;
    out += s.mode + "," + s.nfe + "," + s.split + "," + std::to_string(s.episodes) + "," + fmt(s.mean_error) + "," +
           fmt(s.median_error) + "," + fmt(s.success_rate) + "," + fmt(s.mean_nfe) + "," +
           fmt(s.mean_nfe_per_chunk) + "," + fmt(s.median_discontinuity) + "," + fmt(s.threshold) + "\n";
  }
  return out;
}

std::string timing_csv(const SweepReport& report) {
  std::string out = std::string(kTimingSchema) + "\n";
  out += "mode,nfe,split,episodes,wall_s,wall_per_chunk_ms\n";
  for (const auto& row : report.rows) {
    const auto& s = row.summary;
    out += s.mode + "," + s.nfe + "," + s.split + "," + std::to_string(s.episodes) + "," + fmt(row.wall_s) + "," +
           fmt(row.wall_per_chunk_ms) + "\n";
  }
  return out;
}

std::vector<EvalSummary> ablation_report(const taskgen::Dataset& ds, int episodes, const EvalAssets& assets,
                                         const RolloutConfig& base, std::uint64_t seed) {
  std::vector<EvalSummary> rows;
  for (const char* split : {"seen", "unseen"}) {
    const auto tasks = episode_tasks(ds, split, episodes, seed);
    for (InitMode m : kAllModes) {
      RolloutConfig cfg = base;
      cfg.mode = m;
      cfg.nfe.reset();
      rows.push_back(summarize(run_episodes(tasks, assets, cfg, seed), cfg, split));
    }
  }
  return rows;
}

std::string ablation_csv(const std::vector<EvalSummary>& rows) {
  std::string out = std::string(kAblationSchema) + "\n";
  out += "split,mode,nfe,episodes,success_rate,median_error,median_discontinuity,mean_nfe_per_chunk,threshold\n";
  for (const auto& s : rows)
    out += s.split + "," + s.mode + "," + s.nfe + "," + std::to_string(s.episodes) + "," + fmt(s.success_rate) + "," +
           fmt(s.median_error) + "," + fmt(s.median_discontinuity) + "," + fmt(s.mean_nfe_per_chunk) + "," +
           fmt(s.threshold) + "\n";
  return out;
}

void write_trace_jsonl(std::ostream& os, const EpisodeBatch& batch, InitMode mode) {
  for (std::size_t i = 0; i < batch.results.size(); ++i) {
    for (const auto& st : batch.results[i].trace) {
      nlohmann::json j;
      j["episode"] = i;
      j["task"] = batch.tasks[i].task_id;
      j["mode"] = to_string(mode);
      j["chunk"] = st.chunk;
      j["progress"] = st.progress;
      j["similarity"] = std::isfinite(st.similarity) ? nlohmann::json(st.similarity) : nlohmann::json(nullptr);
      j["noise_scale"] = st.noise_scale;
      j["nfe"] = st.nfe;
      os << j.dump() << "\n";
    }
  }
}

}  // namespace priorflow::eval
