#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include "priorflow/gpm/session.hpp"
#include "priorflow/taskgen/dataset.hpp"

namespace priorflow::train {

struct OptimConfig {
  std::string optimizer = "adamw";
  double lr = 1e-3;
  int batch_size = 64;
  int steps = 500;
  double warmup_ratio = 0.0;
  double weight_decay = 0.0;
  int log_every = 50;

  void validate(const std::string& stage) const;
  // Linear warm-up over the first warmup_ratio * steps steps, constant afterwards.
  double lr_at(int step) const;
};

struct Stage1Config : OptimConfig {
  std::vector<int> hidden = {128, 128};
  bool linear_skip = true;
  Stage1Config() {
    batch_size = 64;
    steps = 20000;
    warmup_ratio = 0.1;
    log_every = 100;
  }
};

struct Stage2Config : OptimConfig {
  double tau_c = 0.07;
  int hidden = 64;
  int embed_dim = 32;
  Stage2Config() { batch_size = 64; }
};

struct Stage3Config : OptimConfig {
  double p_cold = 0.1;
  int feature_dim = 32;
  int state_dim = 32;
  Stage3Config() {
    batch_size = 16;
    steps = 2000;
  }
};

struct GpmConfig {
  int k = 8;
  double tau_s = 0.1;
  double var_floor = 1e-4;
  double lambda_min = 0.05;
  double lambda_max = 1.0;
  int nfe_min = 2;
  int nfe_max = 10;
  int window = 8;  // H0
  int stride = 1;  // delta

  void validate() const;
  gpm::SessionConfig session() const;
};

struct EvalConfig {
  std::string mode = "gpm+lcm";
  std::optional<int> nfe;
  std::string split = "seen";
  int episodes = 100;
  double success_threshold = 0.05;
  bool trace = false;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  int horizon = 8;
  taskgen::SuiteConfig suite;
  Stage1Config stage1;
  Stage2Config stage2;
  Stage3Config stage3;
  GpmConfig gpm;
  EvalConfig eval;

  void validate() const;
  nlohmann::json to_json() const;
  // Overlays the keys present in `j` onto `base`; unknown keys are rejected.
  static PipelineConfig from_json(const nlohmann::json& j, PipelineConfig base);
  static PipelineConfig load(const std::filesystem::path& path, PipelineConfig base);
};

}  // namespace priorflow::train
