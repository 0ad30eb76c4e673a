#include "priorflow/nn/param_store.hpp"

#include "priorflow/common/errors.hpp"

namespace priorflow::nn {

void ParamStore::add(const std::string& name, Matrix init) {
  require(!name.empty(), "parameter name must be non-empty");
  require(!index_.contains(name), "parameter '" + name + "' already has an owner");
  require(init.rows() > 0 && init.cols() > 0, "parameter '" + name + "' must be non-empty");
  Entry e;
  e.name = name;
  e.first_moment = Matrix::Zero(init.rows(), init.cols());
  e.second_moment = Matrix::Zero(init.rows(), init.cols());
  e.value = std::move(init);
  index_.emplace(name, entries_.size());
  entries_.push_back(std::move(e));
}

const Matrix& ParamStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw InvalidInput("unknown parameter '" + name + "'");
  return entries_[it->second].value;
}

Matrix& ParamStore::get_mut(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw InvalidInput("unknown parameter '" + name + "'");
  return entries_[it->second].value;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

void ParamStore::set_step(std::int64_t step) {
  require(step >= 0, "optimizer step counter must be non-negative");
  step_ = step;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (step_ != other.step_ || entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) return false;
    if (a.value != b.value || a.first_moment != b.first_moment || a.second_moment != b.second_moment)
      return false;
  }
  return true;
}

}  // namespace priorflow::nn
