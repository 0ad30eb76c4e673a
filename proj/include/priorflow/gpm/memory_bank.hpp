#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "priorflow/common/counters.hpp"
#include "priorflow/gpm/prior_head.hpp"

namespace priorflow::gpm {

struct MemoryEntry {
  TaskEmbedding key;
  Matrix trajectory;  // T x A
  int window = 1;     // H0
  int stride = 1;     // delta
  std::string task_id;

  int length() const { return static_cast<int>(trajectory.rows()); }
  int num_windows() const { return (length() - window) / stride + 1; }
};

struct RetrievalHit {
  std::size_t index = 0;
  double score = 0.0;
};

struct BankLayout {
  int embed_dim = 0;
  int action_dim = 0;
  int window = 1;
  int stride = 1;
};

// Exact inner-product top-k memory over unit-norm keys. Built once, then read
// concurrently by any number of sessions.
class MemoryBank {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  explicit MemoryBank(BankLayout layout);

  const BankLayout& layout() const { return layout_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const MemoryEntry& entry(std::size_t i) const { return entries_.at(i); }
  const std::vector<MemoryEntry>& entries() const { return entries_; }

  // Validates the entry and appends it.
  void insert(MemoryEntry entry);

  // The k highest inner products, descending; ties go to the earlier entry.
  // `exclude` removes one entry from consideration (leave-one-out replay).
  std::vector<RetrievalHit> retrieve_topk(const TaskEmbedding& query, std::size_t k,
                                          std::optional<std::size_t> exclude = std::nullopt,
                                          CallCounters* counters = nullptr) const;

  std::string serialize() const;
  static MemoryBank deserialize(std::string_view bytes, const std::string& what = "memory bank");
  void save(const std::filesystem::path& path) const;
  static MemoryBank load(const std::filesystem::path& path);

  bool operator==(const MemoryBank& other) const;

 private:
  BankLayout layout_;
  std::vector<MemoryEntry> entries_;
};

struct BankSummary {
  std::size_t entries = 0;
  int embed_dim = 0;
  int action_dim = 0;
  int window = 0;
  int stride = 0;
  std::map<std::string, std::size_t> per_task;
  double max_norm_error = 0.0;
  bool keys_unit_norm = true;
};

BankSummary summarize(const MemoryBank& bank, double norm_tolerance = 1e-9);

}  // namespace priorflow::gpm
