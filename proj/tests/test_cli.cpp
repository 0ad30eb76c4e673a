#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <json.hpp>

#include "priorflow/app/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;  // stdout and stderr together
};

Run run(const std::string& args) {
  const std::string cmd = std::string(PRIORFLOW_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("priorflow-cli-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string flags() const { return "--config " + std::string(PRIORFLOW_SMOKE_CONFIG) + " --out-dir " + path.string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void build_all(const TempDir& d) {
  for (const char* cmd : {"gen-data", "train-policy", "train-prior-head", "build-memory", "train-lcm"}) {
    const auto r = run(std::string(cmd) + " " + d.flags());
    INFO(cmd << ": " << r.out);
    REQUIRE(r.code == 0);
  }
}

}  // namespace

TEST_CASE("configs/default.json spells out exactly the built-in defaults") {
  const auto file = nlohmann::json::parse(slurp(PRIORFLOW_DEFAULT_CONFIG));
  CHECK(file == priorflow::train::PipelineConfig{}.to_json());
}

TEST_CASE("usage errors exit 2") {
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("eval --no-such-flag").code == 2);
  CHECK(run("--help").code == 0);
  CHECK(run("sweep --help").code == 0);
}

TEST_CASE("bad flag values exit 1") {
  TempDir d;
  CHECK(run("gen-data --config /nonexistent/cfg.json --out-dir " + d.path.string()).code == 1);
  const auto r = run("eval --mode warp " + d.flags());
  CHECK(r.code == 1);
  CHECK(r.out.find("unknown mode") != std::string::npos);
}

TEST_CASE("each step names the artifact it is missing") {
  TempDir d;
  auto r = run("eval " + d.flags());
  CHECK(r.code == 1);
  CHECK(r.out.find("gen-data") != std::string::npos);
  REQUIRE(run("gen-data " + d.flags()).code == 0);
  r = run("eval " + d.flags());
  CHECK(r.code == 1);
  CHECK(r.out.find("policy.ckpt") != std::string::npos);
  r = run("build-memory " + d.flags());
  CHECK(r.code == 1);
  CHECK(r.out.find("prior_head.ckpt") != std::string::npos);
  r = run("inspect-bank " + d.flags());
  CHECK(r.code == 1);
  CHECK(r.out.find("memory.bank") != std::string::npos);
}

TEST_CASE("gen-data is byte-reproducible") {
  TempDir a, b;
  REQUIRE(run("gen-data " + a.flags()).code == 0);
  REQUIRE(run("gen-data " + b.flags()).code == 0);
  const priorflow::app::Layout la{a.path}, lb{b.path};
  CHECK(slurp(la.dataset_store()) == slurp(lb.dataset_store()));
  CHECK(slurp(la.dataset_manifest()) == slurp(lb.dataset_manifest()));
  TempDir c;
  REQUIRE(run("gen-data --seed 99 " + c.flags()).code == 0);
  CHECK(slurp(la.dataset_store()) != slurp(priorflow::app::Layout{c.path}.dataset_store()));
}

TEST_CASE("full smoke pipeline: freeze contracts, manifests, eval, sweep, inspect") {
  TempDir d;
  const priorflow::app::Layout L{d.path};
  REQUIRE(run("gen-data " + d.flags()).code == 0);
  REQUIRE(run("train-policy " + d.flags()).code == 0);
  const std::string policy = slurp(L.policy());
  REQUIRE(run("train-prior-head " + d.flags()).code == 0);
  CHECK(slurp(L.policy()) == policy);
  REQUIRE(run("build-memory " + d.flags()).code == 0);
  const std::string head = slurp(L.prior_head());
  REQUIRE(run("train-lcm " + d.flags()).code == 0);
  CHECK(slurp(L.policy()) == policy);
  CHECK(slurp(L.prior_head()) == head);

  for (const char* cmd : {"gen-data", "train-policy", "train-prior-head", "build-memory", "train-lcm"}) {
    REQUIRE(fs::exists(L.manifest(cmd)));
    const auto m = nlohmann::json::parse(slurp(L.manifest(cmd)));
    CHECK(m["command"] == cmd);
    for (const char* k : {"config", "seed", "inputs", "outputs", "metrics", "timestamp"}) CHECK(m.contains(k));
    for (const auto& [path, fp] : m["outputs"].items())
      CHECK(fp.get<std::string>() == priorflow::app::file_fingerprint(path));
  }
  for (int s : {1, 2, 3}) CHECK(fs::exists(L.log(s)));

  auto r = run("eval --mode gpm-init --trace " + d.flags());
  INFO(r.out);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(L.eval_dir() / "gpm-init_seen_adaptive.json"));
  CHECK(fs::exists(L.eval_dir() / "gpm-init_seen_adaptive.trace.jsonl"));
  r = run("eval --mode gaussian-init --nfe 4 --split unseen --episodes 3 " + d.flags());
  REQUIRE(r.code == 0);
  const auto summary = nlohmann::json::parse(slurp(L.eval_dir() / "gaussian-init_unseen_4.json"));
  CHECK(summary["episodes"] == 3);
  CHECK(summary["mean_nfe_per_chunk"].get<double>() == doctest::Approx(4.0));

  REQUIRE(run("sweep --episodes 3 " + d.flags()).code == 0);
  const std::string sweep1 = slurp(L.sweep_csv());
  REQUIRE(run("sweep --episodes 3 " + d.flags()).code == 0);
  CHECK(slurp(L.sweep_csv()) == sweep1);
  CHECK(sweep1.rfind("# schema: priorflow-sweep/1\n", 0) == 0);
  CHECK(fs::exists(L.timing_csv()));
  CHECK(fs::exists(L.ablation_csv()));

  r = run("inspect-bank " + d.flags());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("entries") != std::string::npos);
  CHECK(fs::exists(L.manifest("inspect-bank")));
}

TEST_CASE("inspect-bank rejects truncated and corrupted banks") {
  TempDir d;
  build_all(d);
  const priorflow::app::Layout L{d.path};
  const std::string good = slurp(L.bank());

  {
    std::ofstream out(L.bank(), std::ios::binary | std::ios::trunc);
    out << good.substr(0, good.size() / 2);
  }
  auto r = run("inspect-bank " + d.flags());
  CHECK(r.code == 1);
  CHECK(r.out.find("checksum") != std::string::npos);

  std::string bad = good;
  bad[bad.size() / 3] = static_cast<char>(bad[bad.size() / 3] ^ 0x01);
  {
    std::ofstream out(L.bank(), std::ios::binary | std::ios::trunc);
    out << bad;
  }
  r = run("inspect-bank " + d.flags());
  CHECK(r.code == 1);
  CHECK(r.out.find("checksum") != std::string::npos);

  // eval refuses the damaged bank as well
  CHECK(run("eval --mode gpm-init --episodes 2 " + d.flags()).code == 1);
}
