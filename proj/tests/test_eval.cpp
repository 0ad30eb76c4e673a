#include <doctest.h>

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "priorflow/common/errors.hpp"
#include "priorflow/eval/bench.hpp"
#include "priorflow/train/stages.hpp"

using namespace priorflow;
using namespace priorflow::eval;

namespace {

// Replays the noise-free expert path, ignoring the start it is handed.
class OracleGenerator : public ChunkGenerator {
 public:
  OracleGenerator(const taskgen::TaskDescriptor& task, int horizon)
      : path_(taskgen::expert_path(task)), h_(horizon), norm_(flow::Normalizer::identity(taskgen::kActionDim)) {}
  const flow::Normalizer& normalizer() const override { return norm_; }
  ActionChunk generate(const ChunkRequest& req) const override {
    if (req.counters) req.counters->velocity_evals += static_cast<std::size_t>(req.steps);
    return train::chunk_at(path_, req.chunk_index * h_, h_);
  }

 private:
  Matrix path_;
  int h_;
  flow::Normalizer norm_;
};

struct Trained {
  taskgen::Dataset ds;
  train::PipelineConfig cfg;
  std::unique_ptr<flow::FlowPolicy> policy;
  std::unique_ptr<PolicyGenerator> gen;
  std::unique_ptr<gpm::PriorHead> head;
  std::unique_ptr<gpm::MemoryBank> bank;
  std::unique_ptr<lcm::LocalConsistencyMemory> lcm;

  EvalAssets assets() const { return {gen.get(), head.get(), bank.get(), lcm.get()}; }
  RolloutConfig rollout(InitMode m) const {
    RolloutConfig r;
    r.mode = m;
    r.horizon = cfg.horizon;
    r.gpm = cfg.gpm;
    return r;
  }
};

const Trained& trained() {
  static const Trained t = [] {
    Trained t;
    taskgen::SuiteConfig s;
    s.families = {"reach", "arc", "hover", "wave"};
    s.unseen_families = {"wave"};
    s.tasks_per_family = 2;
    s.heldout_tasks_per_family = 0;
    s.demos_per_task = 6;
    s.val_demos_per_task = 2;
    t.ds = taskgen::build_dataset(s, 11);
    t.cfg.stage1.steps = 300;
    t.cfg.stage1.hidden = {32, 32};
    t.cfg.stage2.steps = 60;
    t.cfg.stage2.batch_size = 8;
    t.cfg.stage3.steps = 60;
    t.policy = std::make_unique<flow::FlowPolicy>(train::stage1_train(t.ds, t.cfg));
    t.gen = std::make_unique<PolicyGenerator>(*t.policy);
    t.head = std::make_unique<gpm::PriorHead>(train::stage2_train(t.ds, t.cfg));
    t.bank = std::make_unique<gpm::MemoryBank>(train::build_memory_bank(t.ds, *t.head, t.cfg.gpm));
    t.lcm = std::make_unique<lcm::LocalConsistencyMemory>(
        train::stage3_train(train::lcm_rollouts(t.ds, *t.head, *t.bank, t.cfg), t.cfg));
    return t;
  }();
  return t;
}

EpisodeResult fake_result(double err, bool ok, int nfe, int chunks, std::optional<double> disc) {
  EpisodeResult r;
  r.endpoint_error = err;
  r.success = ok;
  r.nfe = nfe;
  r.discontinuity = disc;
  r.chunks.assign(static_cast<std::size_t>(chunks), ActionChunk::Zero(2, 2));
  return r;
}

}  // namespace

TEST_CASE("discontinuity metric on hand cases") {
  ActionChunk a = ActionChunk::Zero(3, 2), b = ActionChunk::Zero(3, 2);
  b.row(0) << 3, 4;
  const std::vector<ActionChunk> jump{a, b};
  CHECK(*discontinuity_metric(jump) == doctest::Approx(5.0).epsilon(1e-15));

  ActionChunk c = ActionChunk::Constant(3, 2, 0.7);
  const std::vector<ActionChunk> flat{c, c, c, c};
  CHECK(*discontinuity_metric(flat) == 0.0);

  // mean over boundaries: jumps of 5 and 0
  const std::vector<ActionChunk> mixed{a, b, a};
  CHECK(*discontinuity_metric(mixed) == doctest::Approx(2.5));

  CHECK_FALSE(discontinuity_metric(std::vector<ActionChunk>{a}).has_value());
  CHECK_FALSE(discontinuity_metric(std::vector<ActionChunk>{}).has_value());
}

TEST_CASE("oracle generator reaches the goal in every mode") {
  const auto& t = trained();
  for (const char* split : {"seen", "unseen"}) {
    const auto tasks = episode_tasks(t.ds, split, 12, 3);
    for (const auto& task : tasks) {
      OracleGenerator oracle(task.task, t.cfg.horizon);
      EvalAssets a = t.assets();
      a.generator = &oracle;
      for (InitMode m : kAllModes) {
        const auto r = rollout_episode(task, a, t.rollout(m), 1);
        const double expect = (taskgen::expert_path(task.task).bottomRows(1).transpose() - task.task.goal).norm();
        CHECK(r.endpoint_error == doctest::Approx(expect).epsilon(1e-12));
        CHECK(r.endpoint_error < 1e-9);
        CHECK(r.success);
        CHECK(static_cast<int>(r.chunks.size()) == static_cast<int>(std::ceil(task.t_ref / t.cfg.horizon)));
      }
    }
  }
}

TEST_CASE("call counters isolate what each mode touches") {
  const auto& t = trained();
  const auto tasks = episode_tasks(t.ds, "seen", 8, 4);
  for (const auto& task : tasks) {
    const auto g = rollout_episode(task, t.assets(), t.rollout(InitMode::kGaussian), 2);
    CHECK(g.counters.retrievals == 0);
    CHECK(g.counters.lcm_calls == 0);
    CHECK(g.counters.velocity_evals == static_cast<std::size_t>(g.nfe));
    CHECK(g.nfe == t.cfg.gpm.nfe_max * static_cast<int>(g.chunks.size()));

    const auto p = rollout_episode(task, t.assets(), t.rollout(InitMode::kGpm), 2);
    CHECK(p.counters.retrievals == 1);
    CHECK(p.counters.lcm_calls == 0);
    CHECK(p.counters.velocity_evals == static_cast<std::size_t>(p.nfe));

    const auto l = rollout_episode(task, t.assets(), t.rollout(InitMode::kGpmLcm), 2);
    CHECK(l.counters.retrievals == 1);
    CHECK(l.counters.lcm_calls == l.chunks.size());
    CHECK(l.counters.velocity_evals == static_cast<std::size_t>(l.nfe));

    for (const auto* r : {&g, &p, &l}) {
      int sum = 0;
      for (const auto& st : r->trace) {
        CHECK(st.nfe >= 1);
        CHECK(st.nfe <= t.cfg.gpm.nfe_max);
        sum += st.nfe;
      }
      CHECK(sum == r->nfe);
    }
  }
}

TEST_CASE("fixed NFE override applies to every mode") {
  const auto& t = trained();
  const auto task = episode_tasks(t.ds, "seen", 1, 0).front();
  for (InitMode m : kAllModes) {
    for (int n : {1, 3, t.cfg.gpm.nfe_max}) {
      auto cfg = t.rollout(m);
      cfg.nfe = n;
      const auto r = rollout_episode(task, t.assets(), cfg, 9);
      CHECK(r.nfe == n * static_cast<int>(r.chunks.size()));
      CHECK(r.counters.velocity_evals == static_cast<std::size_t>(r.nfe));
    }
    auto bad = t.rollout(m);
    bad.nfe = 0;
    CHECK_THROWS_AS(rollout_episode(task, t.assets(), bad, 1), InvalidInput);
    bad.nfe = t.cfg.gpm.nfe_max + 1;
    CHECK_THROWS_AS(rollout_episode(task, t.assets(), bad, 1), InvalidInput);
  }
}

TEST_CASE("rollouts are reproducible by seed") {
  const auto& t = trained();
  const auto task = episode_tasks(t.ds, "unseen", 1, 5).front();
  for (InitMode m : kAllModes) {
    const auto a = rollout_episode(task, t.assets(), t.rollout(m), 77);
    const auto b = rollout_episode(task, t.assets(), t.rollout(m), 77);
    const auto c = rollout_episode(task, t.assets(), t.rollout(m), 78);
    REQUIRE(a.chunks.size() == b.chunks.size());
    for (std::size_t i = 0; i < a.chunks.size(); ++i) CHECK(a.chunks[i] == b.chunks[i]);
    CHECK(a.chunks.front() != c.chunks.front());
  }
}

TEST_CASE("missing assets are reported, not guessed") {
  const auto& t = trained();
  const auto task = episode_tasks(t.ds, "seen", 1, 0).front();
  EvalAssets a = t.assets();
  a.bank = nullptr;
  CHECK_THROWS_AS(rollout_episode(task, a, t.rollout(InitMode::kGpm), 1), MissingArtifact);
  CHECK_NOTHROW(rollout_episode(task, a, t.rollout(InitMode::kGaussian), 1));
  a = t.assets();
  a.lcm = nullptr;
  CHECK_THROWS_AS(rollout_episode(task, a, t.rollout(InitMode::kGpmLcm), 1), MissingArtifact);
  CHECK_NOTHROW(rollout_episode(task, a, t.rollout(InitMode::kGpm), 1));
  a = t.assets();
  a.generator = nullptr;
  CHECK_THROWS(rollout_episode(task, a, t.rollout(InitMode::kGaussian), 1));
  CHECK_THROWS_AS(mode_from_string("gpm"), InvalidInput);
  for (InitMode m : kAllModes) CHECK(mode_from_string(to_string(m)) == m);
}

TEST_CASE("episode tasks: paired across calls, drawn from the requested split") {
  const auto& t = trained();
  const auto a = episode_tasks(t.ds, "seen", 40, 8);
  const auto b = episode_tasks(t.ds, "seen", 40, 8);
  const auto shorter = episode_tasks(t.ds, "seen", 10, 8);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].task_id == b[i].task_id);
  for (std::size_t i = 0; i < shorter.size(); ++i) CHECK(a[i].task_id == shorter[i].task_id);
  for (const auto& e : episode_tasks(t.ds, "unseen", 20, 8)) CHECK(e.task.family == taskgen::Family::kWave);
  for (const auto& e : a) CHECK(e.task.family != taskgen::Family::kWave);
  CHECK_THROWS(episode_tasks(t.ds, "val", 1, 0));
  CHECK_THROWS(episode_tasks(t.ds, "seen", 0, 0));
}

TEST_CASE("summarize against a hand count") {
  EpisodeBatch batch;
  batch.results = {fake_result(0.01, true, 20, 2, 0.5), fake_result(0.30, false, 10, 2, 0.1),
                   fake_result(0.04, true, 30, 3, std::nullopt), fake_result(0.20, false, 20, 3, 0.3)};
  RolloutConfig cfg;
  cfg.mode = InitMode::kGpm;
  cfg.success_threshold = 0.05;
  const auto s = summarize(batch, cfg, "seen");
  CHECK(s.mode == "gpm-init");
  CHECK(s.nfe == "adaptive");
  CHECK(s.episodes == 4);
  CHECK(s.mean_error == doctest::Approx(0.1375));
  CHECK(s.median_error == doctest::Approx(0.12));
  CHECK(s.success_rate == 0.5);
  CHECK(s.mean_nfe == 20.0);
  CHECK(s.mean_nfe_per_chunk == doctest::Approx(80.0 / 10.0));
  CHECK(s.median_discontinuity == doctest::Approx(0.3));
  cfg.mode = InitMode::kGaussian;
  CHECK(summarize(batch, cfg, "seen").nfe == std::to_string(cfg.gpm.nfe_max));
  cfg.nfe = 4;
  CHECK(summarize(batch, cfg, "seen").nfe == "4");
  CHECK(median({3.0}) == 3.0);
  CHECK_THROWS(median({}));
}

TEST_CASE("default grid holds the cells the comparison needs") {
  const train::GpmConfig g;
  const auto grid = default_grid(g);
  auto has = [&](InitMode m, std::optional<int> n) {
    for (const auto& c : grid)
      if (c.mode == m && c.nfe == n) return true;
    return false;
  };
  CHECK(has(InitMode::kGpm, std::nullopt));
  CHECK(has(InitMode::kGpmLcm, std::nullopt));
  CHECK(has(InitMode::kGaussian, g.nfe_max));
  CHECK(has(InitMode::kGaussian, 1));
  CHECK_FALSE(has(InitMode::kGaussian, std::nullopt));
  for (const auto& c : grid) CHECK((!c.nfe || (*c.nfe >= 1 && *c.nfe <= g.nfe_max)));
}

TEST_CASE("sweep: one row per cell, CSV bytes stable across runs") {
  const auto& t = trained();
  const std::vector<SweepCell> grid{{InitMode::kGaussian, 2}, {InitMode::kGaussian, t.cfg.gpm.nfe_max},
                                    {InitMode::kGpm, std::nullopt}, {InitMode::kGpmLcm, 3}};
  const auto base = t.rollout(InitMode::kGaussian);
  const auto r1 = sweep(grid, t.ds, "seen", 6, t.assets(), base, 21);
  const auto r2 = sweep(grid, t.ds, "seen", 6, t.assets(), base, 21);
  REQUIRE(r1.rows.size() == grid.size());
  const auto csv = sweep_csv(r1);
  CHECK(csv == sweep_csv(r2));
  std::istringstream in(csv);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == grid.size() + 2);
  CHECK(lines[0] == kSweepSchema);
  CHECK(lines[2].rfind("gaussian-init,2,seen,6,", 0) == 0);
  CHECK(lines[4].rfind("gpm-init,adaptive,seen,6,", 0) == 0);
  CHECK(lines[5].rfind("gpm+lcm,3,seen,6,", 0) == 0);
  CHECK(r1.rows[3].summary.mean_nfe_per_chunk == doctest::Approx(3.0));
  CHECK(timing_csv(r1).rfind(std::string(kTimingSchema) + "\n", 0) == 0);
  CHECK(sweep_csv(sweep(grid, t.ds, "seen", 6, t.assets(), base, 22)) != csv);
}

TEST_CASE("ablation: fixed row order over paired tasks") {
  const auto& t = trained();
  const auto rows = ablation_report(t.ds, 5, t.assets(), t.rollout(InitMode::kGaussian), 4);
  REQUIRE(rows.size() == 6);
  const char* splits[] = {"seen", "seen", "seen", "unseen", "unseen", "unseen"};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].split == splits[i]);
    CHECK(rows[i].mode == to_string(kAllModes[i % 3]));
    CHECK(rows[i].episodes == 5);
  }
  // each ablation row equals a direct batch on the same task list and seed ladder
  const auto tasks = episode_tasks(t.ds, "unseen", 5, 4);
  const auto direct = summarize(run_episodes(tasks, t.assets(), t.rollout(InitMode::kGpm), 4),
                                t.rollout(InitMode::kGpm), "unseen");
  CHECK(direct.median_error == rows[4].median_error);
  CHECK(direct.median_discontinuity == rows[4].median_discontinuity);
  const auto csv = ablation_csv(rows);
  CHECK(csv.rfind(std::string(kAblationSchema) + "\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 8);
}

TEST_CASE("trace: one JSON object per chunk") {
  const auto& t = trained();
  const auto tasks = episode_tasks(t.ds, "seen", 3, 6);
  for (InitMode m : {InitMode::kGaussian, InitMode::kGpmLcm}) {
    const auto batch = run_episodes(tasks, t.assets(), t.rollout(m), 6);
    std::ostringstream os;
    write_trace_jsonl(os, batch, m);
    std::istringstream in(os.str());
    std::string line;
    std::size_t n = 0, chunks = 0;
    for (const auto& r : batch.results) chunks += r.chunks.size();
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      for (const char* k : {"episode", "task", "mode", "chunk", "progress", "similarity", "noise_scale", "nfe"})
        CHECK(j.contains(k));
      CHECK(j["mode"] == to_string(m));
      CHECK(j["similarity"].is_null() == (m == InitMode::kGaussian));
      ++n;
    }
    CHECK(n == chunks);
  }
}
