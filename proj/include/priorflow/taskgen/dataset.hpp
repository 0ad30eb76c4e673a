#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include "priorflow/taskgen/families.hpp"

namespace priorflow::taskgen {

struct SuiteConfig {
  std::vector<std::string> families = {"reach", "arc", "pick_place", "out_back", "hover", "zigzag", "wave", "corner"};
  std::vector<std::string> unseen_families = {"wave", "corner"};
  int tasks_per_family = 6;
  int heldout_tasks_per_family = 1;  // seen families only, drawn from the held-out region
  int demos_per_task = 20;
  int val_demos_per_task = 4;
  double noise_std = 0.01;

  void validate() const;
  nlohmann::json to_json() const;
  static SuiteConfig from_json(const nlohmann::json& j, SuiteConfig base);
  static SuiteConfig from_json(const nlohmann::json& j);
};

enum class Split { kTrain, kVal, kUnseen };
const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct TaskRecord {
  std::string id;
  TaskDescriptor descriptor;
  bool unseen = false;
};

struct Demonstration {
  std::size_t task = 0;
  int index = 0;
  Split split = Split::kTrain;
  Matrix trajectory;  // T x 2
};

class Dataset {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  SuiteConfig config;
  std::uint64_t master_seed = 0;
  std::vector<TaskRecord> tasks;
  std::vector<Demonstration> demos;

  const TaskRecord& task_of(const Demonstration& d) const { return tasks.at(d.task); }
  std::string demo_id(const Demonstration& d) const;
  Matrix contexts(const Demonstration& d) const { return trajectory_contexts(task_of(d).descriptor, d.trajectory); }
  std::vector<std::size_t> demos_in(Split s) const;
  std::vector<std::size_t> seen_tasks() const;
  std::vector<std::size_t> unseen_tasks() const;
  // Mean demonstration length of a family; the progress reference for sessions.
  double reference_length(Family f) const;

  // Binary trajectory store (sealed by crc32) and its fingerprint.
  std::string serialize_store() const;
  static Dataset deserialize_store(std::string_view bytes);
  std::string fingerprint() const;
  nlohmann::json manifest() const;

  // Writes <dir>/manifest.json and <dir>/trajectories.bin.
  void save(const std::filesystem::path& dir) const;
  // Verifies the store checksum and that the manifest refers to the same store.
  static Dataset load(const std::filesystem::path& dir);
};

Dataset build_dataset(const SuiteConfig& config, std::uint64_t master_seed);

}  // namespace priorflow::taskgen
