#include <doctest.h>

#include <cmath>
#include <set>

#include "priorflow/common/errors.hpp"
#include "priorflow/train/stages.hpp"
#include "support/finite_diff.hpp"

using namespace priorflow;
using namespace priorflow::train;

namespace {

taskgen::Dataset small_dataset(std::uint64_t seed = 5) {
  taskgen::SuiteConfig s;
  s.families = {"reach", "arc", "hover", "wave"};
  s.unseen_families = {"wave"};
  s.tasks_per_family = 2;
  s.heldout_tasks_per_family = 0;
  s.demos_per_task = 6;
  s.val_demos_per_task = 2;
  return taskgen::build_dataset(s, seed);
}

PipelineConfig fast_config() {
  PipelineConfig c;
  c.stage1.steps = 60;
  c.stage1.hidden = {16, 16};
  c.stage1.log_every = 20;
  c.stage2.steps = 40;
  c.stage2.batch_size = 8;
  c.stage2.log_every = 10;
  c.stage3.steps = 40;
  c.stage3.log_every = 10;
  return c;
}

double infonce_value(const Matrix& z, const std::vector<std::size_t>& labels, double tau) {
  nn::Tape tape;
  return tape.value(infonce_graph(tape, tape.constant(z), labels, tau))(0, 0);
}

std::size_t positives_of(const std::vector<std::size_t>& labels, std::size_t i) {
  std::size_t n = 0;
  for (std::size_t j = 0; j < labels.size(); ++j) n += (j != i && labels[j] == labels[i]) ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("infonce: one positive at similarity 1, one negative at 0, tau 1") {
  Matrix z(3, 2);
  z << 1, 0, 1, 0, 0, 1;
  CHECK(infonce_value(z, {0, 0, 1}, 1.0) == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))).epsilon(1e-12));
  CHECK(infonce_value(z, {0, 0, 1}, 1.0) == doctest::Approx(0.3133).epsilon(1e-4));
}

TEST_CASE("infonce: identical candidates give log n") {
  for (int n : {2, 3, 5, 9}) {
    Matrix z = Matrix::Zero(n + 1, 3);
    z.col(1).setOnes();
    std::vector<std::size_t> labels{0, 0};
    for (int i = 2; i <= n; ++i) labels.push_back(static_cast<std::size_t>(i));
    CHECK(infonce_value(z, labels, 0.07) == doctest::Approx(std::log(static_cast<double>(n))).epsilon(1e-12));
  }
}

TEST_CASE("infonce: perfect separation drives the loss to zero as tau shrinks") {
  Matrix z(4, 1);
  z << 1, 1, -1, -1;
  const std::vector<std::size_t> labels{0, 0, 1, 1};
  double prev = INFINITY;
  for (double tau : {1.0, 0.3, 0.1, 0.03}) {
    const double l = infonce_value(z, labels, tau);
    CHECK(l < prev);
    prev = l;
  }
  CHECK(prev < 1e-20);
}

TEST_CASE("infonce: anchors without a positive are left out") {
  Matrix z(3, 2);
  z << 1, 0, 1, 0, 0, 1;
  Matrix z2(4, 2);
  z2 << 1, 0, 1, 0, 0, 1, 0.6, 0.8;
  // the extra row is a candidate for the anchors but never an anchor itself
  const double with_extra = infonce_value(z2, {0, 0, 1, 2}, 1.0);
  const double e = std::exp(1.0);
  CHECK(with_extra == doctest::Approx(-std::log(e / (e + 1.0 + std::exp(0.6)))).epsilon(1e-12));
  CHECK(infonce_value(z, {0, 0, 1}, 1.0) < with_extra);
}

TEST_CASE("infonce loss gradients match central differences over 10 seeds") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    gpm::PriorHead head({5, 6, 4}, seed);
    Rng rng(seed + 100);
    Matrix ctx(6, 5);
    for (Eigen::Index i = 0; i < ctx.size(); ++i) ctx.data()[i] = standard_normal(rng);
    const std::vector<std::size_t> labels{0, 0, 1, 1, 2, 2};
    const double tau = 0.5;
    const auto report = infonce_loss(head, ctx, labels, tau);
    auto numeric = testing::central_differences(head.params_mut(),
                                                [&] { return infonce_loss(head, ctx, labels, tau).loss; });
    CHECK(testing::worst_relative_error(report, numeric) < 1e-4);
  }
}

TEST_CASE("task-pair sampler: batch of 4 over 2 tasks with 2 demos each") {
  taskgen::SuiteConfig s;
  s.families = {"reach", "arc"};
  s.unseen_families = {};
  s.tasks_per_family = 1;
  s.heldout_tasks_per_family = 0;
  s.demos_per_task = 2;
  s.val_demos_per_task = 0;
  const auto ds = taskgen::build_dataset(s, 1);
  TaskPairSampler sampler(ds, taskgen::Split::kTrain, 4, 9);
  for (int b = 0; b < 20; ++b) {
    const auto batch = sampler.next();
    REQUIRE(batch.size() == 4);
    const auto labels = batch_labels(batch);
    for (std::size_t i = 0; i < 4; ++i) CHECK(positives_of(labels, i) == 1);
    std::set<std::size_t> demos;
    for (const auto& it : batch) demos.insert(it.demo);
    CHECK(demos.size() == 4);
  }
}

TEST_CASE("task-pair sampler: 1000 batches, every anchor has a positive") {
  const auto ds = taskgen::build_dataset(taskgen::SuiteConfig{}, 0);
  for (int bs : {2, 8, 64, 100}) {
    TaskPairSampler sampler(ds, taskgen::Split::kTrain, bs, 3);
    for (int b = 0; b < 1000 / 4; ++b) {
      const auto batch = sampler.next();
      CHECK(static_cast<int>(batch.size()) == bs);
      const auto labels = batch_labels(batch);
      for (std::size_t i = 0; i < labels.size(); ++i) REQUIRE(positives_of(labels, i) >= 1);
      for (const auto& it : batch) {
        CHECK(ds.demos[it.demo].split == taskgen::Split::kTrain);
        CHECK(ds.demos[it.demo].task == it.task);
        CHECK(it.step >= 0);
        CHECK(it.step < ds.demos[it.demo].trajectory.rows());
      }
    }
  }
}

TEST_CASE("task-pair sampler: reproducible by seed") {
  const auto ds = small_dataset();
  TaskPairSampler a(ds, taskgen::Split::kTrain, 6, 4), b(ds, taskgen::Split::kTrain, 6, 4), c(ds, taskgen::Split::kTrain, 6, 5);
  bool differs = false;
  for (int i = 0; i < 30; ++i) {
    const auto x = a.next(), y = b.next(), z = c.next();
    for (std::size_t j = 0; j < x.size(); ++j) {
      CHECK(x[j].demo == y[j].demo);
      CHECK(x[j].step == y[j].step);
      differs = differs || x[j].demo != z[j].demo || x[j].step != z[j].step;
    }
  }
  CHECK(differs);
}

TEST_CASE("task-pair sampler: a task with a single demonstration is excluded") {
  auto ds = small_dataset();
  const std::size_t victim = ds.demos[ds.demos_in(taskgen::Split::kTrain).front()].task;
  bool kept_one = false;
  std::vector<taskgen::Demonstration> demos;
  for (auto& d : ds.demos) {
    if (d.task == victim && d.split == taskgen::Split::kTrain) {
      if (kept_one) continue;
      kept_one = true;
    }
    demos.push_back(d);
  }
  ds.demos = demos;
  TaskPairSampler sampler(ds, taskgen::Split::kTrain, 4, 1);
  CHECK(std::find(sampler.tasks().begin(), sampler.tasks().end(), victim) == sampler.tasks().end());
  for (int i = 0; i < 50; ++i)
    for (const auto& it : sampler.next()) CHECK(it.task != victim);
}

TEST_CASE("chunk_at pads with the last row") {
  Matrix traj(3, 2);
  traj << 0, 0, 1, 1, 2, 4;
  const auto c = chunk_at(traj, 1, 4);
  Matrix expect(4, 2);
  expect << 1, 1, 2, 4, 2, 4, 2, 4;
  CHECK(c == expect);
}

TEST_CASE("stage 1: zero steps leaves the network at its initialization") {
  const auto ds = small_dataset();
  auto cfg = fast_config();
  cfg.stage1.steps = 0;
  const auto trained = stage1_train(ds, cfg);
  const auto init = make_policy(ds, cfg);
  CHECK(trained.params() == init.params());
}

TEST_CASE("stage 1: fixed seed gives a bit-identical checkpoint") {
  const auto ds = small_dataset();
  const auto cfg = fast_config();
  CHECK(stage1_train(ds, cfg).to_checkpoint().serialize() == stage1_train(ds, cfg).to_checkpoint().serialize());
  auto other = cfg;
  other.seed = 1;
  CHECK(stage1_train(ds, cfg).to_checkpoint().serialize() != stage1_train(ds, other).to_checkpoint().serialize());
}

TEST_CASE("stage 1: one training task, the smoothed loss falls below 10% of its start") {
  taskgen::SuiteConfig s;
  s.families = {"reach", "arc"};
  s.unseen_families = {"arc"};
  s.tasks_per_family = 1;
  s.heldout_tasks_per_family = 0;
  s.demos_per_task = 20;
  s.val_demos_per_task = 0;
  const auto ds = taskgen::build_dataset(s, 2);
  REQUIRE(ds.seen_tasks().size() == 1);
  PipelineConfig cfg;
  cfg.stage1.hidden = {64, 64};
  cfg.stage1.steps = 10000;
  cfg.stage1.log_every = 500;
  TrainLog log;
  stage1_train(ds, cfg, &log);
  MESSAGE("first " << log.first_loss() << " last " << log.last_loss());
  CHECK(log.last_loss() < 0.1 * log.first_loss());
}

TEST_CASE("train log: monotone steps and a fixed CSV header") {
  const auto ds = small_dataset();
  TrainLog log;
  stage1_train(ds, fast_config(), &log);
  REQUIRE(log.rows.size() == 3);
  for (std::size_t i = 1; i < log.rows.size(); ++i) CHECK(log.rows[i].step > log.rows[i - 1].step);
  CHECK(log.to_csv().rfind("stage,seed,step,loss,lr,elapsed_s\n", 0) == 0);
}

TEST_CASE("stage 1: warm-up ramps the learning rate linearly") {
  OptimConfig o;
  o.lr = 1e-3;
  o.steps = 100;
  o.warmup_ratio = 0.1;
  CHECK(o.lr_at(0) == doctest::Approx(1e-4));
  CHECK(o.lr_at(4) == doctest::Approx(5e-4));
  CHECK(o.lr_at(9) == doctest::Approx(1e-3));
  CHECK(o.lr_at(50) == 1e-3);
  o.warmup_ratio = 0.0;
  CHECK(o.lr_at(0) == 1e-3);
}

TEST_CASE("stage 2: only head weights move and same-task embeddings separate") {
  const auto ds = small_dataset();
  auto cfg = fast_config();
  cfg.stage2.steps = 200;
  const auto init = make_prior_head(cfg);
  const auto head = stage2_train(ds, cfg);
  REQUIRE(head.params().size() == init.params().size());
  bool moved = false;
  for (std::size_t i = 0; i < init.params().size(); ++i) {
    CHECK(head.params().entries()[i].name == init.params().entries()[i].name);
    moved = moved || head.params().entries()[i].value != init.params().entries()[i].value;
  }
  CHECK(moved);
  const auto sep = embedding_separation(head, ds, taskgen::Split::kVal);
  CHECK(sep.intra > sep.inter);
}

TEST_CASE("stage 2: zero steps returns the initialization") {
  const auto ds = small_dataset();
  auto cfg = fast_config();
  cfg.stage2.steps = 0;
  CHECK(stage2_train(ds, cfg).params() == make_prior_head(cfg).params());
}

TEST_CASE("memory bank: one entry per training demonstration, unit keys, self-retrieval") {
  const auto ds = small_dataset();
  const auto cfg = fast_config();
  const auto head = stage2_train(ds, cfg);
  const auto bank = build_memory_bank(ds, head, cfg.gpm);
  const auto idx = bank_demo_indices(ds);
  CHECK(bank.size() == ds.demos_in(taskgen::Split::kTrain).size());
  CHECK(idx.size() == bank.size());
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const auto& e = bank.entry(i);
    CHECK(std::abs(e.key.norm() - 1.0) < 1e-9);
    CHECK(e.trajectory == ds.demos[idx[i]].trajectory);
    CHECK(e.task_id == ds.task_of(ds.demos[idx[i]]).id);
    const auto hits = bank.retrieve_topk(e.key, 1);
    CHECK(bank.entry(hits.front().index).key == e.key);
    CHECK(hits.front().score == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("stage 3 rollouts: targets equal ground truth minus a recomputed leave-one-out prior") {
  const auto ds = small_dataset();
  const auto cfg = fast_config();
  const auto head = stage2_train(ds, cfg);
  const auto bank = build_memory_bank(ds, head, cfg.gpm);
  const auto rollouts = lcm_rollouts(ds, head, bank, cfg);
  const auto idx = bank_demo_indices(ds);
  REQUIRE(rollouts.size() == idx.size());
  for (std::size_t r : {std::size_t{0}, idx.size() / 2, idx.size() - 1}) {
    const auto& demo = ds.demos[idx[r]];
    const auto& task = ds.task_of(demo).descriptor;
    const double t_ref = ds.reference_length(task.family);
    const Matrix ctx = ds.contexts(demo);
    auto session = gpm::EpisodeSession::begin_with_query(bank, train::episode_key(head, ctx), cfg.gpm.session(),
                                                         t_ref, nullptr, r);
    (void)session;
    const Vector c0 = ctx.row(0).transpose();
    auto s2 = gpm::EpisodeSession::begin(bank, head, {c0.data(), static_cast<std::size_t>(c0.size())},
                                         cfg.gpm.session(), t_ref, nullptr, r);
    const int chunks = static_cast<int>(std::ceil(t_ref / cfg.horizon));
    REQUIRE(static_cast<int>(rollouts[r].size()) == chunks);
    for (int j = 0; j < chunks; ++j) {
      const auto step = s2.step(cfg.horizon);
      const ActionChunk gt = chunk_at(demo.trajectory, j * cfg.horizon, cfg.horizon);
      CHECK((rollouts[r][j].target_bias - (gt - step.prior.mean)).cwiseAbs().maxCoeff() < 1e-12);
      const ActionChunk prev = j == 0 ? ActionChunk::Zero(cfg.horizon, 2)
                                      : chunk_at(demo.trajectory, (j - 1) * cfg.horizon, cfg.horizon);
      CHECK(rollouts[r][j].prev_chunk == prev);
    }
  }
}

TEST_CASE("stage 3: zero steps gives the untrained LCM; training is reproducible and lowers the loss") {
  const auto ds = small_dataset();
  auto cfg = fast_config();
  const auto head = stage2_train(ds, cfg);
  const auto bank = build_memory_bank(ds, head, cfg.gpm);
  const auto rollouts = lcm_rollouts(ds, head, bank, cfg);
  auto zero = cfg;
  zero.stage3.steps = 0;
  CHECK(stage3_train(rollouts, zero).params() == make_lcm(cfg).params());
  cfg.stage3.steps = 400;
  cfg.stage3.log_every = 50;
  TrainLog log;
  const auto a = stage3_train(rollouts, cfg, &log);
  const auto b = stage3_train(rollouts, cfg);
  CHECK(a.params() == b.params());
  MESSAGE("first " << log.first_loss() << " last " << log.last_loss());
  CHECK(log.last_loss() <= 0.5 * log.first_loss());
}

TEST_CASE("config: overlay, unknown keys and validation") {
  PipelineConfig base;
  const auto j = nlohmann::json::parse(R"({"seed": 7, "stage1": {"steps": 12}, "gpm": {"k": 3}})");
  const auto c = PipelineConfig::from_json(j, base);
  CHECK(c.seed == 7);
  CHECK(c.stage1.steps == 12);
  CHECK(c.stage1.lr == base.stage1.lr);
  CHECK(c.gpm.k == 3);
  CHECK(c.gpm.tau_s == base.gpm.tau_s);
  CHECK_THROWS_AS(PipelineConfig::from_json(nlohmann::json::parse(R"({"stage1": {"stepz": 1}})"), base), InvalidInput);
  CHECK_THROWS_AS(PipelineConfig::from_json(nlohmann::json::parse(R"({"bogus": 1})"), base), InvalidInput);
  auto bad = base;
  bad.stage2.batch_size = 5;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
  bad = base;
  bad.stage1.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
  const auto round = PipelineConfig::from_json(base.to_json(), PipelineConfig{});
  CHECK(round.to_json() == base.to_json());
}
