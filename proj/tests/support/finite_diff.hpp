#pragma once

// Test-only finite-difference oracle. Perturbs parameters in place and
// re-evaluates the scalar loss through the forward path only.

#include <algorithm>
#include <functional>
#include <map>
#include <string>

#include "priorflow/nn/param_store.hpp"

namespace priorflow::testing {

inline std::map<std::string, Matrix> central_differences(nn::ParamStore& store,
                                                         const std::function<double()>& loss, double h = 1e-5) {
  std::map<std::string, Matrix> out;
  for (auto& e : store.entries_mut()) {
    Matrix g(e.value.rows(), e.value.cols());
    for (Eigen::Index i = 0; i < e.value.size(); ++i) {
      double& p = e.value.data()[i];
      const double saved = p;
      p = saved + h;
      const double up = loss();
      p = saved - h;
      const double down = loss();
      p = saved;
      g.data()[i] = (up - down) / (2.0 * h);
    }
    out.emplace(e.name, std::move(g));
  }
  return out;
}

inline double relative_error(const Matrix& analytic, const Matrix& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-10});
  return (analytic - numeric).norm() / scale;
}

// Largest per-array relative error between an analytic report and the oracle.
template <typename Report>
double worst_relative_error(const Report& analytic, const std::map<std::string, Matrix>& numeric) {
  double worst = 0.0;
  for (const auto& [name, g] : numeric) {
    const auto it = analytic.grads.find(name);
    const Matrix a = it == analytic.grads.end() ? Matrix::Zero(g.rows(), g.cols()) : it->second;
    worst = std::max(worst, relative_error(a, g));
  }
  return worst;
}

}  // namespace priorflow::testing
