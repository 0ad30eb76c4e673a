#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>
#include "priorflow/nn/param_store.hpp"

namespace priorflow::nn {

// Self-describing container: JSON metadata (block specs, dims, provenance),
// named parameter arrays with their optimizer moments, and named constant
// buffers (e.g. normalization statistics), sealed by crc32.
struct Checkpoint {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  ParamStore params;
  std::map<std::string, Matrix> buffers;

  std::string serialize() const;
  static Checkpoint deserialize(std::string_view bytes, const std::string& what = "checkpoint");

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace priorflow::nn
