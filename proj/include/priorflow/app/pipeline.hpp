#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "priorflow/eval/bench.hpp"
#include "priorflow/train/config.hpp"

namespace priorflow::app {

namespace fs = std::filesystem;

// Fixed artifact locations under one output directory.
struct Layout {
  fs::path root;

  fs::path dataset() const { return root / "dataset"; }
  fs::path dataset_manifest() const { return dataset() / "manifest.json"; }
  fs::path dataset_store() const { return dataset() / "trajectories.bin"; }
  fs::path policy() const { return root / "policy.ckpt"; }
  fs::path prior_head() const { return root / "prior_head.ckpt"; }
  fs::path bank() const { return root / "memory.bank"; }
  fs::path lcm() const { return root / "lcm.ckpt"; }
  fs::path log(int stage) const { return root / "logs" / ("stage" + std::to_string(stage) + ".csv"); }
  fs::path manifest(const std::string& command) const { return root / "manifests" / (command + ".json"); }
  fs::path sweep_csv() const { return root / "sweep" / "sweep.csv"; }
  fs::path timing_csv() const { return root / "sweep" / "timing.csv"; }
  fs::path ablation_csv() const { return root / "sweep" / "ablation.csv"; }
  fs::path eval_dir() const { return root / "eval"; }
};

std::string file_fingerprint(const fs::path& path);
std::string utc_timestamp();

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;   // path -> fingerprint
  std::map<std::string, std::string> outputs;  // path -> fingerprint
  nlohmann::json metrics = nlohmann::json::object();
  std::string timestamp;

  nlohmann::json to_json() const;
  void write(const Layout& layout) const;
};

// Each step checks that its inputs exist (MissingArtifact names the absent file),
// writes its outputs and its manifest, and returns the manifest.
RunManifest gen_data(const train::PipelineConfig& cfg, const Layout& layout);
RunManifest train_policy(const train::PipelineConfig& cfg, const Layout& layout);
RunManifest train_prior_head(const train::PipelineConfig& cfg, const Layout& layout);
RunManifest build_memory(const train::PipelineConfig& cfg, const Layout& layout);
RunManifest train_lcm(const train::PipelineConfig& cfg, const Layout& layout);
RunManifest run_eval(const train::PipelineConfig& cfg, const Layout& layout);
// Default grid on the configured split plus the seen/unseen ablation table.
RunManifest run_sweep(const train::PipelineConfig& cfg, const Layout& layout);

// All five build steps in order.
void run_all(const train::PipelineConfig& cfg, const Layout& layout);

// Loaded artifacts for evaluation; members are empty when the file is absent.
struct LoadedAssets {
  std::unique_ptr<flow::FlowPolicy> policy;
  std::unique_ptr<eval::PolicyGenerator> generator;
  std::unique_ptr<gpm::PriorHead> head;
  std::unique_ptr<gpm::MemoryBank> bank;
  std::unique_ptr<lcm::LocalConsistencyMemory> lcm;

  eval::EvalAssets view() const;
};
// Requires the dataset and the policy; the rest are loaded when present.
LoadedAssets load_assets(const Layout& layout, const taskgen::Dataset& ds);

eval::RolloutConfig rollout_config(const train::PipelineConfig& cfg);

// Human-readable bank summary. Cross-checks the build-memory manifest when one sits in `layout`.
std::string inspect_bank(const fs::path& bank_path, const std::optional<Layout>& layout);

}  // namespace priorflow::app
