#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "priorflow/app/pipeline.hpp"
#include "priorflow/common/errors.hpp"

namespace {

using priorflow::app::Layout;
using priorflow::train::PipelineConfig;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::optional<std::string> mode;
  std::optional<int> nfe;
  std::optional<std::string> split;
  std::optional<int> episodes;
  bool trace = false;
};

// defaults < config file < flags
PipelineConfig resolve(const Flags& f) {
  PipelineConfig cfg;
  if (!f.config.empty()) cfg = PipelineConfig::load(f.config, cfg);
  if (f.seed) cfg.seed = *f.seed;
  if (f.mode) cfg.eval.mode = *f.mode;
  if (f.nfe) cfg.eval.nfe = *f.nfe;
  if (f.split) cfg.eval.split = *f.split;
  if (f.episodes) cfg.eval.episodes = *f.episodes;
  if (f.trace) cfg.eval.trace = true;
  priorflow::eval::mode_from_string(cfg.eval.mode);
  cfg.validate();
  return cfg;
}

void report(const priorflow::app::RunManifest& m) {
  std::cout << m.command << ": ok\n";
  for (const auto& [path, fp] : m.outputs) std::cout << "  wrote " << path << " [" << fp << "]\n";
  if (!m.metrics.empty()) std::cout << "  " << m.metrics.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"priorflow: prior-initialized flow policies with retrieval memory", "priorflow"};
  app.require_subcommand(1, 1);
  Flags f;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON config file (overlays defaults)")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "master seed");
    sub->add_option("--out-dir", f.out_dir, "artifact directory")->capture_default_str();
  };
  auto add_eval = [&](CLI::App* sub) {
    sub->add_option("--mode", f.mode, "gaussian-init | gpm-init | gpm+lcm");
    sub->add_option("--nfe", f.nfe, "fixed number of Euler steps");
    sub->add_option("--split", f.split, "seen | unseen");
    sub->add_option("--episodes", f.episodes, "episodes per evaluation");
    sub->add_flag("--trace", f.trace, "write a per-chunk JSON-lines trace");
  };

  struct Cmd {
    const char* name;
    const char* help;
    bool eval_flags;
  };
  const Cmd cmds[] = {
      {"gen-data", "generate the synthetic task suite", false},
      {"train-policy", "stage 1: CFM flow policy", false},
      {"train-prior-head", "stage 2: InfoNCE prior head", false},
      {"build-memory", "embed training demonstrations into the memory bank", false},
      {"train-lcm", "stage 3: local consistency memory", false},
      {"eval", "roll out episodes in one mode", true},
      {"sweep", "mode x NFE grid and the ablation table", true},
      {"inspect-bank", "summarize and audit the memory bank", false},
  };
  for (const auto& c : cmds) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub);
    if (c.eval_flags) add_eval(sub);
  }

  if (argc <= 1) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    const PipelineConfig cfg = resolve(f);
    const Layout layout{f.out_dir};
    namespace app_ns = priorflow::app;
    if (cmd == "gen-data") report(app_ns::gen_data(cfg, layout));
    else if (cmd == "train-policy") report(app_ns::train_policy(cfg, layout));
    else if (cmd == "train-prior-head") report(app_ns::train_prior_head(cfg, layout));
    else if (cmd == "build-memory") report(app_ns::build_memory(cfg, layout));
    else if (cmd == "train-lcm") report(app_ns::train_lcm(cfg, layout));
    else if (cmd == "eval") report(app_ns::run_eval(cfg, layout));
    else if (cmd == "sweep") report(app_ns::run_sweep(cfg, layout));
    else if (cmd == "inspect-bank") {
      std::cout << app_ns::inspect_bank(layout.bank(), layout);
      app_ns::RunManifest m;
      m.command = "inspect-bank";
      m.config = cfg.to_json();
      m.seed = cfg.seed;
      m.inputs[layout.bank().string()] = app_ns::file_fingerprint(layout.bank());
      m.timestamp = app_ns::utc_timestamp();
      m.write(layout);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "priorflow " << cmd << ": " << e.what() << "\n";
    return 1;
  }
}
