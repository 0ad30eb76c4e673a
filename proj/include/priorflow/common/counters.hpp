#pragma once

#include <cstddef>

namespace priorflow {

// Per-episode call accounting. Owned by whoever runs the episode; never shared
// between concurrent episodes.
struct CallCounters {
  std::size_t velocity_evals = 0;  // NFE
  std::size_t retrievals = 0;
  std::size_t lcm_calls = 0;
};

}  // namespace priorflow
