#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "priorflow/common/binary_io.hpp"
#include "priorflow/common/errors.hpp"
#include "priorflow/taskgen/dataset.hpp"

using namespace priorflow;
using namespace priorflow::taskgen;

namespace {

SuiteConfig small_suite() {
  SuiteConfig c;
  c.families = {"reach", "hover", "wave"};
  c.unseen_families = {"wave"};
  c.tasks_per_family = 2;
  c.heldout_tasks_per_family = 1;
  c.demos_per_task = 5;
  c.val_demos_per_task = 2;
  return c;
}

std::filesystem::path temp_dir(const char* name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_SUITE("sample_task") {
  TEST_CASE("same seed gives the same descriptor") {
    for (const auto& f : families()) CHECK(sample_task(f.family, 17) == sample_task(f.family, 17));
  }

  TEST_CASE("parameters stay in declared ranges over 10^4 draws") {
    for (const auto& f : families()) {
      for (std::uint64_t s = 0; s < 10000; s += 8) CHECK(in_declared_ranges(sample_task(f.family, s)));
    }
    int ok = 0;
    for (std::uint64_t s = 0; s < 10000; ++s) ok += in_declared_ranges(sample_task(Family::kArc, s));
    CHECK(ok == 10000);
  }

  TEST_CASE("distinct seeds give distinct descriptors") {
    std::set<std::pair<double, double>> starts;
    for (std::uint64_t s = 0; s < 1000; ++s) {
      const auto t = sample_task(Family::kReach, s);
      starts.insert({t.start.x(), t.goal.y()});
    }
    CHECK(starts.size() >= 990);
  }

  TEST_CASE("regions split the start box") {
    for (std::uint64_t s = 0; s < 500; ++s) {
      CHECK(region_of(sample_task(Family::kHover, s, Region::kSeen)) == Region::kSeen);
      CHECK(region_of(sample_task(Family::kHover, s, Region::kHeldOut)) == Region::kHeldOut);
      CHECK(in_declared_ranges(sample_task(Family::kHover, s, Region::kHeldOut)));
    }
  }

  TEST_CASE("unknown family names are rejected") {
    CHECK_THROWS_AS(family_from_name("juggle"), InvalidInput);
    CHECK(family_from_name("pick_place") == Family::kPickPlace);
  }
}

TEST_SUITE("expert_trajectory") {
  TEST_CASE("noise-free paths start and end exactly") {
    for (const auto& f : families()) {
      const auto t = sample_task(f.family, 3);
      const auto p = expert_path(t);
      CHECK(p.rows() == f.length);
      CHECK(p.row(0).transpose() == t.start);
      CHECK((p.row(f.length - 1).transpose() - t.goal).norm() < 1e-12);
      CHECK(f.length % 8 == 0);
      CHECK(f.length >= 32);
      CHECK(f.length <= 64);
    }
  }

  TEST_CASE("noisy endpoints stay within a 5 sigma band") {
    for (const auto& f : families()) {
      const auto t = sample_task(f.family, 4);
      const auto p = expert_trajectory(t, f.length, 0.01, 99);
      CHECK((p.row(0).transpose() - t.start).cwiseAbs().maxCoeff() < 0.05);
      CHECK((p.row(f.length - 1).transpose() - t.goal).cwiseAbs().maxCoeff() < 0.05);
      CHECK(p.allFinite());
      CHECK(p == expert_trajectory(t, f.length, 0.01, 99));
      CHECK(p != expert_trajectory(t, f.length, 0.01, 100));
    }
  }

  TEST_CASE("second differences respect the declared curvature bound") {
    for (const auto& f : families()) {
      double worst = 0.0;
      for (std::uint64_t s = 0; s < 2000; ++s) worst = std::max(worst, max_second_difference(expert_path(sample_task(f.family, s))));
      CHECK(worst <= f.curvature_bound);
    }
  }

  TEST_CASE("wrong length is rejected") {
    CHECK_THROWS_AS(expert_trajectory(sample_task(Family::kReach, 1), 40, 0.0, 0), InvalidInput);
  }

  TEST_CASE("hover dwells at the start and out_back returns to its goal") {
    const auto h = sample_task(Family::kHover, 8);
    const auto p = expert_path(h);
    for (int i = 0; i < 12; ++i) CHECK(p.row(i).transpose() == h.start);
    const auto o = sample_task(Family::kOutBack, 8);
    const auto q = expert_path(o);
    CHECK((q.row(20).transpose() - o.via).norm() < 1e-12);
  }
}

TEST_SUITE("featurize") {
  TEST_CASE("shape and determinism") {
    const auto t = sample_task(Family::kArc, 5);
    const auto obs = observe(t, Point(0.3, 0.2));
    const auto c = featurize(t, obs);
    CHECK(c.size() == kContextDim);
    CHECK(c == featurize(t, obs));
    CHECK(c(family_index(Family::kArc)) == 1.0);
    CHECK(c.head(kNumFamilies).sum() == 1.0);
    CHECK(c.cwiseAbs().maxCoeff() <= 1.0);
  }

  TEST_CASE("same parameters give identical non-observation slots") {
    auto a = sample_task(Family::kZigzag, 5);
    auto b = a;
    b.instance_seed = 77;
    const auto ca = featurize(a, observe(a, Point(0.1, 0.1)));
    const auto cb = featurize(b, observe(b, Point(0.8, 0.5)));
    CHECK(ca.head(kNumFamilies + kNumParams) == cb.head(kNumFamilies + kNumParams));
    CHECK(ca.tail(kObservationDim) != cb.tail(kObservationDim));
  }

  TEST_CASE("trajectory contexts observe the previous action") {
    const auto t = sample_task(Family::kReach, 6);
    const auto p = expert_path(t);
    const auto ctx = trajectory_contexts(t, p);
    CHECK(ctx.rows() == p.rows());
    CHECK(ctx.row(0).transpose() == featurize(t, observe(t, t.start)));
    CHECK(ctx.row(5).transpose() == featurize(t, observe(t, p.row(4).transpose())));
  }
}

TEST_SUITE("build_dataset") {
  TEST_CASE("partitions are disjoint, exhaustive and split by task") {
    const auto ds = build_dataset(small_suite(), 1);
    const auto m = ds.manifest();
    std::set<std::string> all;
    std::size_t total = 0;
    for (const char* p : {"train", "val", "unseen"})
      for (const auto& id : m["partitions"][p]) {
        all.insert(id.get<std::string>());
        ++total;
      }
    CHECK(total == ds.demos.size());
    CHECK(all.size() == ds.demos.size());
    // reach and hover: 2 seen + 1 held-out; wave: 2 unseen
    CHECK(ds.tasks.size() == 8);
    CHECK(ds.seen_tasks().size() == 4);
    CHECK(ds.unseen_tasks().size() == 4);
    for (const auto& d : ds.demos) {
      const auto& t = ds.task_of(d);
      CHECK(t.unseen == (d.split == Split::kUnseen));
      if (t.unseen && t.descriptor.family != Family::kWave) CHECK(region_of(t.descriptor) == Region::kHeldOut);
      if (!t.unseen) CHECK(region_of(t.descriptor) == Region::kSeen);
    }
  }

  TEST_CASE("per-task demo counts match the config") {
    const auto ds = build_dataset(small_suite(), 2);
    std::map<std::size_t, int> per_task, val;
    for (const auto& d : ds.demos) {
      ++per_task[d.task];
      val[d.task] += d.split == Split::kVal;
    }
    for (const auto& [t, n] : per_task) {
      CHECK(n == 5);
      CHECK(val[t] == (ds.tasks[t].unseen ? 0 : 2));
    }
  }

  TEST_CASE("regeneration from the same seed is bit-identical") {
    const auto a = build_dataset(small_suite(), 3);
    const auto b = build_dataset(small_suite(), 3);
    CHECK(a.serialize_store() == b.serialize_store());
    CHECK(a.manifest().dump() == b.manifest().dump());
    CHECK(a.fingerprint() != build_dataset(small_suite(), 4).fingerprint());
  }

  TEST_CASE("default suite has eight families with six tasks each") {
    const auto ds = build_dataset(SuiteConfig{}, 0);
    CHECK(ds.seen_tasks().size() == 6 * 6);
    CHECK(ds.unseen_tasks().size() == 6 + 2 * 6);
    CHECK(ds.demos_in(Split::kTrain).size() == 36 * 16);
    CHECK(ds.reference_length(Family::kZigzag) == 56.0);
  }

  TEST_CASE("inconsistent configs are rejected") {
    auto c = small_suite();
    c.families = {"reach"};
    c.unseen_families = {};
    CHECK_THROWS_AS(build_dataset(c, 0), InvalidInput);
    c = small_suite();
    c.unseen_families = {"corner"};
    CHECK_THROWS_AS(build_dataset(c, 0), InvalidInput);
    c = small_suite();
    c.val_demos_per_task = 4;
    CHECK_THROWS_AS(build_dataset(c, 0), InvalidInput);
    c = small_suite();
    c.families.push_back("reach");
    CHECK_THROWS_AS(build_dataset(c, 0), InvalidInput);
    CHECK_THROWS_AS(SuiteConfig::from_json({{"bogus", 1}}), InvalidInput);
  }

  TEST_CASE("save and load round trip, with corruption detected") {
    const auto ds = build_dataset(small_suite(), 5);
    const auto dir = temp_dir("priorflow_ds_test");
    ds.save(dir);
    const auto back = Dataset::load(dir);
    CHECK(back.serialize_store() == ds.serialize_store());
    CHECK(back.config.to_json() == ds.config.to_json());
    std::string bytes = io::read_file(dir / "trajectories.bin");
    bytes[bytes.size() / 2] ^= 0x10;
    io::write_file(dir / "trajectories.bin", bytes);
    CHECK_THROWS_AS(Dataset::load(dir), CorruptFile);
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(Dataset::load(dir), MissingArtifact);
  }
}
