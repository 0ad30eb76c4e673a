#include "priorflow/app/pipeline.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include "priorflow/common/binary_io.hpp"
#include "priorflow/common/errors.hpp"
#include "priorflow/common/log.hpp"
#include "priorflow/train/stages.hpp"

namespace priorflow::app {

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out << text;
}

void require_file(const fs::path& path, const std::string& what, const std::string& producer) {
  if (!fs::exists(path))
    throw MissingArtifact("missing " + what + " at " + path.string() + " (run '" + producer + "' first)");
}

}  // namespace

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace {

RunManifest start(const std::string& command, const train::PipelineConfig& cfg) {
  cfg.validate();
  RunManifest m;
  m.command = command;
  m.config = cfg.to_json();
  m.seed = cfg.seed;
  return m;
}

void add_input(RunManifest& m, const fs::path& p) {
  m.inputs[p.string()] = fs::is_directory(p) ? file_fingerprint(p / "trajectories.bin") : file_fingerprint(p);
}
void add_output(RunManifest& m, const fs::path& p) { m.outputs[p.string()] = file_fingerprint(p); }

taskgen::Dataset load_dataset(const Layout& layout) {
  require_file(layout.dataset_manifest(), "dataset", "gen-data");
  return taskgen::Dataset::load(layout.dataset());
}

RunManifest finish(RunManifest m, const Layout& layout) {
  m.timestamp = utc_timestamp();
  m.write(layout);
  return m;
}

}  // namespace

std::string file_fingerprint(const fs::path& path) { return io::fingerprint(read_file(path)); }

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = config;
  j["seed"] = seed;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["metrics"] = metrics;
  j["timestamp"] = timestamp;
  return j;
}

void RunManifest::write(const Layout& layout) const { write_text(layout.manifest(command), to_json().dump(2) + "\n"); }

RunManifest gen_data(const train::PipelineConfig& cfg, const Layout& layout) {
  RunManifest m = start("gen-data", cfg);
  const auto ds = taskgen::build_dataset(cfg.suite, cfg.seed);
  ds.save(layout.dataset());
  add_output(m, layout.dataset_manifest());
  add_output(m, layout.dataset_store());
  m.metrics["dataset_fingerprint"] = ds.fingerprint();
  m.metrics["tasks"] = ds.tasks.size();
  m.metrics["demonstrations"] = ds.demos.size();
  return finish(std::move(m), layout);
}

RunManifest train_policy(const train::PipelineConfig& cfg, const Layout& layout) {
  RunManifest m = start("train-policy", cfg);
  const auto ds = load_dataset(layout);
  add_input(m, layout.dataset());
  train::TrainLog log;
  const auto policy = train::stage1_train(ds, cfg, &log);
  policy.to_checkpoint().save(layout.policy());
  log.write(layout.log(1));
  add_output(m, layout.policy());
  m.metrics["first_loss"] = log.first_loss();
  m.metrics["last_loss"] = log.last_loss();
  return finish(std::move(m), layout);
}

RunManifest train_prior_head(const train::PipelineConfig& cfg, const Layout& layout) {
  RunManifest m = start("train-prior-head", cfg);
  const auto ds = load_dataset(layout);
  add_input(m, layout.dataset());
  train::TrainLog log;
  const auto head = train::stage2_train(ds, cfg, &log);
  head.to_checkpoint().save(layout.prior_head());
  log.write(layout.log(2));
  add_output(m, layout.prior_head());
  const auto sep = train::embedding_separation(head, ds, taskgen::Split::kVal);
  m.metrics["first_loss"] = log.first_loss();
  m.metrics["last_loss"] = log.last_loss();
  m.metrics["val_intra"] = sep.intra;
  m.metrics["val_inter"] = sep.inter;
  m.metrics["val_margin"] = sep.margin();
  return finish(std::move(m), layout);
}

RunManifest build_memory(const train::PipelineConfig& cfg, const Layout& layout) {
  RunManifest m = start("build-memory", cfg);
  const auto ds = load_dataset(layout);
  require_file(layout.prior_head(), "prior-head checkpoint", "train-prior-head");
  add_input(m, layout.dataset());
  add_input(m, layout.prior_head());
  const auto head = gpm::PriorHead::from_checkpoint(nn::Checkpoint::load(layout.prior_head()));
  const auto bank = train::build_memory_bank(ds, head, cfg.gpm);
  bank.save(layout.bank());
  add_output(m, layout.bank());
  m.metrics["entries"] = bank.size();
  return finish(std::move(m), layout);
}

RunManifest train_lcm(const train::PipelineConfig& cfg, const Layout& layout) {
  RunManifest m = start("train-lcm", cfg);
  const auto ds = load_dataset(layout);
  require_file(layout.prior_head(), "prior-head checkpoint", "train-prior-head");
  require_file(layout.bank(), "memory bank", "build-memory");
  add_input(m, layout.dataset());
  add_input(m, layout.prior_head());
  add_input(m, layout.bank());
  const auto head = gpm::PriorHead::from_checkpoint(nn::Checkpoint::load(layout.prior_head()));
  const auto bank = gpm::MemoryBank::load(layout.bank());
  train::TrainLog log;
  const auto lcm = train::stage3_train(train::lcm_rollouts(ds, head, bank, cfg), cfg, &log);
  lcm.to_checkpoint().save(layout.lcm());
  log.write(layout.log(3));
  add_output(m, layout.lcm());
  m.metrics["first_loss"] = log.first_loss();
  m.metrics["last_loss"] = log.last_loss();
  return finish(std::move(m), layout);
}

eval::EvalAssets LoadedAssets::view() const {
  return {generator.get(), head.get(), bank.get(), lcm.get()};
}

LoadedAssets load_assets(const Layout& layout, const taskgen::Dataset& ds) {
  LoadedAssets a;
  require_file(layout.policy(), "policy checkpoint", "train-policy");
  a.policy = std::make_unique<flow::FlowPolicy>(
      flow::FlowPolicy::from_checkpoint(nn::Checkpoint::load(layout.policy()), ds.fingerprint()));
  a.generator = std::make_unique<eval::PolicyGenerator>(*a.policy);
  if (fs::exists(layout.prior_head()))
    a.head = std::make_unique<gpm::PriorHead>(gpm::PriorHead::from_checkpoint(nn::Checkpoint::load(layout.prior_head())));
  if (fs::exists(layout.bank())) a.bank = std::make_unique<gpm::MemoryBank>(gpm::MemoryBank::load(layout.bank()));
  if (fs::exists(layout.lcm()))
    a.lcm = std::make_unique<lcm::LocalConsistencyMemory>(
        lcm::LocalConsistencyMemory::from_checkpoint(nn::Checkpoint::load(layout.lcm())));
  return a;
}

eval::RolloutConfig rollout_config(const train::PipelineConfig& cfg) {
  eval::RolloutConfig rc;
  rc.mode = eval::mode_from_string(cfg.eval.mode);
  rc.nfe = cfg.eval.nfe;
  rc.horizon = cfg.horizon;
  rc.success_threshold = cfg.eval.success_threshold;
  rc.gpm = cfg.gpm;
  return rc;
}

namespace {

void require_mode_artifacts(const Layout& layout, eval::InitMode mode) {
  require_file(layout.policy(), "policy checkpoint", "train-policy");
  if (mode == eval::InitMode::kGaussian) return;
  require_file(layout.prior_head(), "prior-head checkpoint", "train-prior-head");
  require_file(layout.bank(), "memory bank", "build-memory");
  if (mode == eval::InitMode::kGpmLcm) require_file(layout.lcm(), "LCM checkpoint", "train-lcm");
}

void add_asset_inputs(RunManifest& m, const Layout& layout) {
  add_input(m, layout.dataset());
  for (const auto& p : {layout.policy(), layout.prior_head(), layout.bank(), layout.lcm()})
    if (fs::exists(p)) add_input(m, p);
}

}  // namespace

RunManifest run_eval(const train::PipelineConfig& cfg, const Layout& layout) {
  RunManifest m = start("eval", cfg);
  const auto ds = load_dataset(layout);
  const auto rc = rollout_config(cfg);
  require_mode_artifacts(layout, rc.mode);
  const auto assets = load_assets(layout, ds);
  add_asset_inputs(m, layout);

  const auto tasks = eval::episode_tasks(ds, cfg.eval.split, cfg.eval.episodes, cfg.seed);
  const auto batch = eval::run_episodes(tasks, assets.view(), rc, cfg.seed);
  const auto s = eval::summarize(batch, rc, cfg.eval.split);

  const std::string stem = s.mode + "_" + s.split + "_" + s.nfe;
  nlohmann::json j;
  j["mode"] = s.mode;
  j["nfe"] = s.nfe;
  j["split"] = s.split;
  j["episodes"] = s.episodes;
  j["mean_error"] = s.mean_error;
  j["median_error"] = s.median_error;
  j["success_rate"] = s.success_rate;
  j["mean_nfe"] = s.mean_nfe;
  j["mean_nfe_per_chunk"] = s.mean_nfe_per_chunk;
  j["median_discontinuity"] = s.median_discontinuity;
  j["success_threshold"] = s.threshold;
  const fs::path summary = layout.eval_dir() / (stem + ".json");
  write_text(summary, j.dump(2) + "\n");
  add_output(m, summary);
  if (cfg.eval.trace) {
    const fs::path trace = layout.eval_dir() / (stem + ".trace.jsonl");
    std::ostringstream os;
    eval::write_trace_jsonl(os, batch, rc.mode);
    write_text(trace, os.str());
    add_output(m, trace);
  }
  m.metrics = j;
  m.metrics["wall_s"] = batch.wall_s;
  return finish(std::move(m), layout);
}

RunManifest run_sweep(const train::PipelineConfig& cfg, const Layout& layout) {
  RunManifest m = start("sweep", cfg);
  const auto ds = load_dataset(layout);
  require_mode_artifacts(layout, eval::InitMode::kGpmLcm);
  const auto assets = load_assets(layout, ds);
  add_asset_inputs(m, layout);
  const auto base = rollout_config(cfg);

  const auto report =
      eval::sweep(eval::default_grid(cfg.gpm), ds, cfg.eval.split, cfg.eval.episodes, assets.view(), base, cfg.seed);
  write_text(layout.sweep_csv(), eval::sweep_csv(report));
  write_text(layout.timing_csv(), eval::timing_csv(report));
  const auto ablation = eval::ablation_report(ds, cfg.eval.episodes, assets.view(), base, cfg.seed);
  write_text(layout.ablation_csv(), eval::ablation_csv(ablation));
  add_output(m, layout.sweep_csv());
  add_output(m, layout.timing_csv());
  add_output(m, layout.ablation_csv());
  m.metrics["cells"] = report.rows.size();
  return finish(std::move(m), layout);
}

void run_all(const train::PipelineConfig& cfg, const Layout& layout) {
  gen_data(cfg, layout);
  train_policy(cfg, layout);
  train_prior_head(cfg, layout);
  build_memory(cfg, layout);
  train_lcm(cfg, layout);
}

std::string inspect_bank(const fs::path& bank_path, const std::optional<Layout>& layout) {
  if (!fs::exists(bank_path)) throw MissingArtifact("missing memory bank at " + bank_path.string());
  const auto bank = gpm::MemoryBank::load(bank_path);
  const auto s = gpm::summarize(bank);
  std::ostringstream os;
  os << "bank: " << bank_path.string() << "\n";
  os << "entries: " << s.entries << "\n";
  os << "D_z: " << s.embed_dim << "  A: " << s.action_dim << "  H0: " << s.window << "  stride: " << s.stride << "\n";
  os << "per-task entries:\n";
  for (const auto& [task, n] : s.per_task) os << "  " << task << ": " << n << "\n";
  os << "key norms: " << (s.keys_unit_norm ? "pass" : "FAIL") << " (max |1 - ||k||| = " << s.max_norm_error << ")\n";
  if (layout && fs::exists(layout->manifest("build-memory"))) {
    const auto j = nlohmann::json::parse(read_file(layout->manifest("build-memory")));
    const auto expected = j.at("metrics").at("entries").get<std::size_t>();
    os << "build manifest entries: " << expected << (expected == s.entries ? " (match)" : " (MISMATCH)") << "\n";
  }
  return os.str();
}

}  // namespace priorflow::app
