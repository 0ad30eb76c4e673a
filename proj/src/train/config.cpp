#include "priorflow/train/config.hpp"

#include <cmath>

#include "priorflow/common/binary_io.hpp"
#include "priorflow/common/errors.hpp"

namespace priorflow::train {

namespace {

using nlohmann::json;

json optim_json(const OptimConfig& c) {
  return {{"optimizer", c.optimizer}, {"lr", c.lr},           {"batch_size", c.batch_size},
          {"steps", c.steps},         {"warmup_ratio", c.warmup_ratio}, {"weight_decay", c.weight_decay},
          {"log_every", c.log_every}};
}

bool read_optim(OptimConfig& c, const std::string& key, const json& v) {
  if (key == "optimizer") c.optimizer = v.get<std::string>();
  else if (key == "lr") c.lr = v.get<double>();
  else if (key == "batch_size") c.batch_size = v.get<int>();
  else if (key == "steps") c.steps = v.get<int>();
  else if (key == "warmup_ratio") c.warmup_ratio = v.get<double>();
  else if (key == "weight_decay") c.weight_decay = v.get<double>();
  else if (key == "log_every") c.log_every = v.get<int>();
  else return false;
  return true;
}

[[noreturn]] void unknown(const std::string& section, const std::string& key) {
  throw InvalidInput("config: unknown key '" + key + "' in section '" + section + "'");
}

void require_object(const json& j, const std::string& section) {
  require(j.is_object(), "config: section '" + section + "' must be an object");
}

}  // namespace

void OptimConfig::validate(const std::string& stage) const {
  require(optimizer == "adamw", stage + ": only the adamw optimizer is supported");
  require(lr > 0.0 && std::isfinite(lr), stage + ": lr must be positive");
  require(batch_size >= 1, stage + ": batch_size must be positive");
  require(steps >= 0, stage + ": steps must be non-negative");
  require(warmup_ratio >= 0.0 && warmup_ratio <= 1.0, stage + ": warmup_ratio must lie in [0, 1]");
  require(weight_decay >= 0.0, stage + ": weight_decay must be non-negative");
  require(log_every >= 1, stage + ": log_every must be positive");
}

double OptimConfig::lr_at(int step) const {
  const int warm = static_cast<int>(std::lround(warmup_ratio * steps));
  if (warm <= 0 || step >= warm) return lr;
  return lr * static_cast<double>(step + 1) / static_cast<double>(warm);
}

void GpmConfig::validate() const {
  require(k >= 1, "gpm: k must be positive");
  require(tau_s > 0.0, "gpm: tau_s must be positive");
  require(var_floor > 0.0, "gpm: var_floor must be positive");
  require(window >= 1 && stride >= 1, "gpm: window and stride must be positive");
  session().schedule.validate();
}

gpm::SessionConfig GpmConfig::session() const {
  gpm::SessionConfig s;
  s.k = static_cast<std::size_t>(k);
  s.tau_s = tau_s;
  s.var_floor = var_floor;
  s.schedule = {lambda_min, lambda_max, nfe_min, nfe_max};
  return s;
}

void PipelineConfig::validate() const {
  require(horizon >= 1, "horizon must be positive");
  suite.validate();
  stage1.validate("stage1");
  stage2.validate("stage2");
  stage3.validate("stage3");
  for (int h : stage1.hidden) require(h >= 1, "stage1: hidden widths must be positive");
  require(stage2.tau_c > 0.0, "stage2: tau_c must be positive");
  require(stage2.batch_size >= 2 && stage2.batch_size % 2 == 0, "stage2: batch_size must be even and >= 2");
  require(stage2.hidden >= 1 && stage2.embed_dim >= 1, "stage2: head widths must be positive");
  require(stage3.p_cold >= 0.0 && stage3.p_cold <= 1.0, "stage3: p_cold must lie in [0, 1]");
  require(stage3.feature_dim >= 1 && stage3.state_dim >= 1, "stage3: widths must be positive");
  gpm.validate();
  require(eval.mode == "gaussian-init" || eval.mode == "gpm-init" || eval.mode == "gpm+lcm",
          "eval: mode must be gaussian-init, gpm-init or gpm+lcm");
  require(eval.split == "seen" || eval.split == "unseen", "eval: split must be seen or unseen");
  require(!eval.nfe || (*eval.nfe >= 1 && *eval.nfe <= gpm.nfe_max), "eval: nfe override must lie in [1, N_max]");
  require(eval.episodes >= 1, "eval: episodes must be positive");
  require(eval.success_threshold > 0.0, "eval: success_threshold must be positive");
}

json PipelineConfig::to_json() const {
  json s1 = optim_json(stage1);
  s1["hidden"] = stage1.hidden;
  s1["linear_skip"] = stage1.linear_skip;
  json s2 = optim_json(stage2);
  s2["tau_c"] = stage2.tau_c;
  s2["hidden"] = stage2.hidden;
  s2["embed_dim"] = stage2.embed_dim;
  json s3 = optim_json(stage3);
  s3["p_cold"] = stage3.p_cold;
  s3["feature_dim"] = stage3.feature_dim;
  s3["state_dim"] = stage3.state_dim;
  return {{"seed", seed},
          {"horizon", horizon},
          {"suite", suite.to_json()},
          {"stage1", s1},
          {"stage2", s2},
          {"stage3", s3},
          {"gpm",
           {{"k", gpm.k},
            {"tau_s", gpm.tau_s},
            {"var_floor", gpm.var_floor},
            {"lambda_min", gpm.lambda_min},
            {"lambda_max", gpm.lambda_max},
            {"nfe_min", gpm.nfe_min},
            {"nfe_max", gpm.nfe_max},
            {"window", gpm.window},
            {"stride", gpm.stride}}},
          {"eval",
           {{"mode", eval.mode},
            {"nfe", eval.nfe ? json(*eval.nfe) : json(nullptr)},
            {"split", eval.split},
            {"episodes", eval.episodes},
            {"success_threshold", eval.success_threshold},
            {"trace", eval.trace}}}};
}

PipelineConfig PipelineConfig::from_json(const json& j, PipelineConfig c) {
  require_object(j, "root");
  try {
    for (const auto& [section, body] : j.items()) {
      if (section == "seed") {
        c.seed = body.get<std::uint64_t>();
      } else if (section == "horizon") {
        c.horizon = body.get<int>();
      } else if (section == "suite") {
        c.suite = taskgen::SuiteConfig::from_json(body, c.suite);
      } else if (section == "stage1") {
        require_object(body, section);
        for (const auto& [k, v] : body.items())
          if (k == "hidden") c.stage1.hidden = v.get<std::vector<int>>();
          else if (k == "linear_skip") c.stage1.linear_skip = v.get<bool>();
          else if (!read_optim(c.stage1, k, v)) unknown(section, k);
      } else if (section == "stage2") {
        require_object(body, section);
        for (const auto& [k, v] : body.items())
          if (k == "tau_c") c.stage2.tau_c = v.get<double>();
          else if (k == "hidden") c.stage2.hidden = v.get<int>();
          else if (k == "embed_dim") c.stage2.embed_dim = v.get<int>();
          else if (!read_optim(c.stage2, k, v)) unknown(section, k);
      } else if (section == "stage3") {
        require_object(body, section);
        for (const auto& [k, v] : body.items())
          if (k == "p_cold") c.stage3.p_cold = v.get<double>();
          else if (k == "feature_dim") c.stage3.feature_dim = v.get<int>();
          else if (k == "state_dim") c.stage3.state_dim = v.get<int>();
          else if (!read_optim(c.stage3, k, v)) unknown(section, k);
      } else if (section == "gpm") {
        require_object(body, section);
        for (const auto& [k, v] : body.items())
          if (k == "k") c.gpm.k = v.get<int>();
          else if (k == "tau_s") c.gpm.tau_s = v.get<double>();
          else if (k == "var_floor") c.gpm.var_floor = v.get<double>();
          else if (k == "lambda_min") c.gpm.lambda_min = v.get<double>();
          else if (k == "lambda_max") c.gpm.lambda_max = v.get<double>();
          else if (k == "nfe_min") c.gpm.nfe_min = v.get<int>();
          else if (k == "nfe_max") c.gpm.nfe_max = v.get<int>();
          else if (k == "window") c.gpm.window = v.get<int>();
          else if (k == "stride") c.gpm.stride = v.get<int>();
          else unknown(section, k);
      } else if (section == "eval") {
        require_object(body, section);
        for (const auto& [k, v] : body.items())
          if (k == "mode") c.eval.mode = v.get<std::string>();
          else if (k == "nfe") c.eval.nfe = v.is_null() ? std::nullopt : std::optional<int>(v.get<int>());
          else if (k == "split") c.eval.split = v.get<std::string>();
          else if (k == "episodes") c.eval.episodes = v.get<int>();
          else if (k == "success_threshold") c.eval.success_threshold = v.get<double>();
          else if (k == "trace") c.eval.trace = v.get<bool>();
          else unknown(section, k);
      } else {
        throw InvalidInput("config: unknown section '" + section + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("config: wrong value type: ") + e.what());
  }
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path, PipelineConfig base) {
  const std::string text = io::read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidInput("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j, std::move(base));
}

}  // namespace priorflow::train
