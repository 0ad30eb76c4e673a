#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "priorflow/nn/matrix.hpp"

namespace priorflow::nn {

// Named parameter arrays plus AdamW moment accumulators.
//
// Names are "<block>.<array>"; a name can be registered once, which is how the
// single-owner rule is enforced. Iteration order is insertion order so that
// serialization is stable.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Matrix value;
    Matrix first_moment;
    Matrix second_moment;
  };

  void add(const std::string& name, Matrix init);

  bool contains(const std::string& name) const { return index_.contains(name); }
  const Matrix& get(const std::string& name) const;
  Matrix& get_mut(const std::string& name);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries_mut() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t step);

  bool operator==(const ParamStore& other) const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::int64_t step_ = 0;
};

}  // namespace priorflow::nn
