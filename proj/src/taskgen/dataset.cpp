#include "priorflow/taskgen/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "priorflow/common/binary_io.hpp"
#include "priorflow/common/errors.hpp"
#include "priorflow/common/rng.hpp"

namespace priorflow::taskgen {

namespace {

constexpr char kStoreMagic[] = "PFDS";

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

std::string task_id(const char* family, int index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-%02d", family, index);
  return buf;
}

void write_point(io::ByteWriter& w, const Point& p) {
  w.f64(p.x());
  w.f64(p.y());
}

Point read_point(io::ByteReader& r) {
  const double x = r.f64();
  return Point(x, r.f64());
}

}  // namespace

void SuiteConfig::validate() const {
  require(families.size() >= 2, "suite: at least two task families are required");
  std::set<std::string> seen_names;
  for (const auto& f : families) {
    family_from_name(f);
    require(seen_names.insert(f).second, "suite: family '" + f + "' listed twice");
  }
  for (const auto& f : unseen_families)
    require(contains(families, f), "suite: unseen family '" + f + "' is not part of the suite");
  require(unseen_families.size() < families.size(), "suite: at least one family must be seen");
  require(tasks_per_family >= 1, "suite: tasks_per_family must be >= 1");
  require(heldout_tasks_per_family >= 0, "suite: heldout_tasks_per_family must be >= 0");
  require(demos_per_task >= 2, "suite: demos_per_task must be >= 2");
  require(val_demos_per_task >= 0 && demos_per_task - val_demos_per_task >= 2,
          "suite: each seen task needs at least two training demonstrations");
  require(noise_std >= 0.0 && noise_std < 0.5, "suite: noise_std must lie in [0, 0.5)");
}

nlohmann::json SuiteConfig::to_json() const {
  return {{"families", families},
          {"unseen_families", unseen_families},
          {"tasks_per_family", tasks_per_family},
          {"heldout_tasks_per_family", heldout_tasks_per_family},
          {"demos_per_task", demos_per_task},
          {"val_demos_per_task", val_demos_per_task},
          {"noise_std", noise_std}};
}

SuiteConfig SuiteConfig::from_json(const nlohmann::json& j, SuiteConfig c) {
  require(j.is_object(), "suite config must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "families") c.families = value.get<std::vector<std::string>>();
    else if (key == "unseen_families") c.unseen_families = value.get<std::vector<std::string>>();
    else if (key == "tasks_per_family") c.tasks_per_family = value.get<int>();
    else if (key == "heldout_tasks_per_family") c.heldout_tasks_per_family = value.get<int>();
    else if (key == "demos_per_task") c.demos_per_task = value.get<int>();
    else if (key == "val_demos_per_task") c.val_demos_per_task = value.get<int>();
    else if (key == "noise_std") c.noise_std = value.get<double>();
    else throw InvalidInput("suite config: unknown key '" + key + "'");
  }
  return c;
}

SuiteConfig SuiteConfig::from_json(const nlohmann::json& j) { return from_json(j, SuiteConfig{}); }

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kUnseen: return "unseen";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "unseen") return Split::kUnseen;
  throw InvalidInput("unknown split '" + s + "'");
}

std::string Dataset::demo_id(const Demonstration& d) const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "/%02d", d.index);
  return task_of(d).id + buf;
}

std::vector<std::size_t> Dataset::demos_in(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < demos.size(); ++i)
    if (demos[i].split == s) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::seen_tasks() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (!tasks[i].unseen) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::unseen_tasks() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (tasks[i].unseen) out.push_back(i);
  return out;
}

double Dataset::reference_length(Family f) const {
  double total = 0.0;
  int n = 0;
  for (const auto& d : demos)
    if (task_of(d).descriptor.family == f) {
      total += static_cast<double>(d.trajectory.rows());
      ++n;
    }
  return n > 0 ? total / n : static_cast<double>(family_spec(f).length);
}

Dataset build_dataset(const SuiteConfig& config, std::uint64_t master_seed) {
  config.validate();
  Dataset ds;
  ds.config = config;
  ds.master_seed = master_seed;
  for (const auto& name : config.families) {
    const Family fam = family_from_name(name);
    const bool unseen_family = contains(config.unseen_families, name);
    const int held = unseen_family ? 0 : config.heldout_tasks_per_family;
    for (int j = 0; j < config.tasks_per_family + held; ++j) {
      const bool heldout = j >= config.tasks_per_family;
      const Region region = unseen_family ? Region::kAny : (heldout ? Region::kHeldOut : Region::kSeen);
      const std::uint64_t seed = derive_seed(master_seed, "task/" + name + "/" + std::to_string(j));
      ds.tasks.push_back({task_id(family_spec(fam).name, j), sample_task(fam, seed, region), unseen_family || heldout});
    }
  }
  for (std::size_t t = 0; t < ds.tasks.size(); ++t) {
    const auto& rec = ds.tasks[t];
    const int length = family_spec(rec.descriptor.family).length;
    for (int d = 0; d < config.demos_per_task; ++d) {
      Demonstration demo;
      demo.task = t;
      demo.index = d;
      demo.split = rec.unseen ? Split::kUnseen
                              : (d >= config.demos_per_task - config.val_demos_per_task ? Split::kVal : Split::kTrain);
      demo.trajectory = expert_trajectory(rec.descriptor, length, config.noise_std,
                                          derive_seed(rec.descriptor.instance_seed, static_cast<std::uint64_t>(d)));
      ds.demos.push_back(std::move(demo));
    }
  }
  return ds;
}

std::string Dataset::serialize_store() const {
  io::ByteWriter w;
  w.raw(kStoreMagic);
  w.u32(kFormatVersion);
  w.u64(master_seed);
  w.str(config.to_json().dump());
  w.u64(tasks.size());
  for (const auto& t : tasks) {
    w.str(t.id);
    w.u32(static_cast<std::uint32_t>(family_index(t.descriptor.family)));
    write_point(w, t.descriptor.start);
    write_point(w, t.descriptor.goal);
    write_point(w, t.descriptor.via);
    w.f64(t.descriptor.scale);
    w.u64(t.descriptor.instance_seed);
    w.u32(t.unseen ? 1 : 0);
  }
  w.u64(demos.size());
  for (const auto& d : demos) {
    w.u64(d.task);
    w.u32(static_cast<std::uint32_t>(d.index));
    w.u32(static_cast<std::uint32_t>(d.split));
    w.u32(static_cast<std::uint32_t>(d.trajectory.rows()));
    w.f64s({d.trajectory.data(), static_cast<std::size_t>(d.trajectory.size())});
  }
  w.seal();
  return w.bytes();
}

Dataset Dataset::deserialize_store(std::string_view bytes) {
  auto r = io::ByteReader::verified(bytes, "trajectory store");
  if (r.raw(4) != std::string_view(kStoreMagic, 4)) r.fail("bad magic");
  if (r.u32() != kFormatVersion) r.fail("unsupported format version");
  Dataset ds;
  ds.master_seed = r.u64();
  try {
    ds.config = SuiteConfig::from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad embedded config: ") + e.what());
  }
  const auto n_tasks = r.u64();
  if (n_tasks > r.remaining()) r.fail("implausible task count");
  for (std::uint64_t i = 0; i < n_tasks; ++i) {
    TaskRecord t;
    t.id = r.str();
    const auto fam = r.u32();
    if (fam >= kNumFamilies) r.fail("bad family index");
    t.descriptor.family = static_cast<Family>(fam);
    t.descriptor.start = read_point(r);
    t.descriptor.goal = read_point(r);
    t.descriptor.via = read_point(r);
    t.descriptor.scale = r.f64();
    t.descriptor.instance_seed = r.u64();
    t.unseen = r.u32() != 0;
    ds.tasks.push_back(std::move(t));
  }
  const auto n_demos = r.u64();
  if (n_demos > r.remaining()) r.fail("implausible demonstration count");
  for (std::uint64_t i = 0; i < n_demos; ++i) {
    Demonstration d;
    d.task = r.u64();
    if (d.task >= ds.tasks.size()) r.fail("demonstration refers to a missing task");
    d.index = static_cast<int>(r.u32());
    const auto split = r.u32();
    if (split > 2) r.fail("bad split tag");
    d.split = static_cast<Split>(split);
    const auto rows = r.u32();
    if (rows == 0 || rows * 16ull > r.remaining()) r.fail("bad trajectory length");
    d.trajectory.resize(rows, kActionDim);
    r.f64s({d.trajectory.data(), static_cast<std::size_t>(d.trajectory.size())});
    ds.demos.push_back(std::move(d));
  }
  r.expect_end();
  return ds;
}

std::string Dataset::fingerprint() const { return io::fingerprint(serialize_store()); }

nlohmann::json Dataset::manifest() const {
  nlohmann::json fams = nlohmann::json::array();
  for (const auto& name : config.families) {
    const auto& f = family_spec(family_from_name(name));
    fams.push_back({{"name", name}, {"length", f.length}, {"unseen", contains(config.unseen_families, name)}});
  }
  nlohmann::json task_list = nlohmann::json::array();
  for (const auto& t : tasks) {
    task_list.push_back({{"id", t.id},
                         {"family", family_spec(t.descriptor.family).name},
                         {"split", t.unseen ? "unseen" : "seen"},
                         {"instance_seed", t.descriptor.instance_seed}});
  }
  nlohmann::json parts = {{"train", nlohmann::json::array()}, {"val", nlohmann::json::array()},
                          {"unseen", nlohmann::json::array()}};
  for (const auto& d : demos) parts[to_string(d.split)].push_back(demo_id(d));
  return {{"format_version", kFormatVersion},
          {"master_seed", master_seed},
          {"suite_fingerprint", fingerprint()},
          {"store", "trajectories.bin"},
          {"config", config.to_json()},
          {"families", fams},
          {"tasks", task_list},
          {"partitions", parts},
          {"counts", {{"tasks", tasks.size()}, {"demonstrations", demos.size()}}}};
}

void Dataset::save(const std::filesystem::path& dir) const {
  const std::string store = serialize_store();
  io::write_file(dir / "trajectories.bin", store);
  auto m = manifest();
  io::write_file(dir / "manifest.json", m.dump(2) + "\n");
}

Dataset Dataset::load(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const std::string text = io::read_file(manifest_path);
  const std::string store = io::read_file(dir / "trajectories.bin");
  Dataset ds = deserialize_store(store);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile("dataset manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
  }
  const std::string fp = io::fingerprint(store);
  if (!m.contains("suite_fingerprint") || m["suite_fingerprint"] != fp)
    throw CorruptFile("dataset manifest fingerprint does not match trajectories.bin (" + fp + ")");
  return ds;
}

}  // namespace priorflow::taskgen
