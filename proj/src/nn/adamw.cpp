#include "priorflow/nn/adamw.hpp"

#include <cmath>

#include "priorflow/common/errors.hpp"

namespace priorflow::nn {

void adamw_step(ParamStore& params, const GradientReport& grads, const AdamWConfig& config) {
  require(config.lr >= 0.0 && config.weight_decay >= 0.0, "adamw: lr and weight decay must be non-negative");
  for (const auto& [name, g] : grads.grads) {
    if (!params.contains(name)) continue;
    const Matrix& p = params.get(name);
    require(g.rows() == p.rows() && g.cols() == p.cols(), "adamw: gradient shape differs for '" + name + "'");
    if (!g.allFinite()) throw NonFiniteError("adamw: non-finite gradient for '" + name + "'");
  }

  const std::int64_t step = params.step() + 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));

  for (auto& e : params.entries_mut()) {
    const auto it = grads.grads.find(e.name);
    if (config.weight_decay != 0.0) e.value *= (1.0 - config.lr * config.weight_decay);
    if (it == grads.grads.end()) {
      e.first_moment *= config.beta1;
      e.second_moment *= config.beta2;
    } else {
      const Matrix& g = it->second;
      e.first_moment = config.beta1 * e.first_moment + (1.0 - config.beta1) * g;
      e.second_moment = config.beta2 * e.second_moment + (1.0 - config.beta2) * g.cwiseAbs2();
    }
    e.value.array() -= config.lr * (e.first_moment.array() / bc1) /
                       ((e.second_moment.array() / bc2).sqrt() + config.eps);
  }
  params.set_step(step);
}

}  // namespace priorflow::nn
