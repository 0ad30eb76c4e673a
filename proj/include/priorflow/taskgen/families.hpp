#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "priorflow/nn/matrix.hpp"

namespace priorflow::taskgen {

using Point = Eigen::Vector2d;

inline constexpr int kActionDim = 2;
inline constexpr int kNumFamilies = 8;
inline constexpr int kNumParams = 7;  // start (2), goal (2), via (2), scale
inline constexpr int kObservationDim = 4;
inline constexpr int kContextDim = kNumFamilies + kNumParams + kObservationDim;

enum class Family { kReach, kArc, kPickPlace, kOutBack, kHover, kZigzag, kWave, kCorner };

struct Box {
  Point lo;
  Point hi;
  bool contains(const Point& p) const { return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all(); }
};

struct FamilySpec {
  Family family;
  const char* name;
  int length;  // T
  Box start;
  Box goal;
  Box via;
  double scale_lo;
  double scale_hi;
  // Largest noise-free second difference ||p[i+1] - 2 p[i] + p[i-1]||.
  double curvature_bound;
};

const FamilySpec& family_spec(Family f);
const std::array<FamilySpec, kNumFamilies>& families();
Family family_from_name(std::string_view name);
inline int family_index(Family f) { return static_cast<int>(f); }

// Tasks whose start.y lands in the top band of the start box form the held-out
// parameter region of a family.
enum class Region { kAny, kSeen, kHeldOut };
inline constexpr double kHeldOutStartY = 0.35;

struct TaskDescriptor {
  Family family = Family::kReach;
  Point start = Point::Zero();
  Point goal = Point::Zero();
  Point via = Point::Zero();
  double scale = 0.0;
  std::uint64_t instance_seed = 0;

  bool operator==(const TaskDescriptor& o) const {
    return family == o.family && start == o.start && goal == o.goal && via == o.via && scale == o.scale &&
           instance_seed == o.instance_seed;
  }
};

bool in_declared_ranges(const TaskDescriptor& task);
Region region_of(const TaskDescriptor& task);

TaskDescriptor sample_task(Family family, std::uint64_t seed, Region region = Region::kAny);

// Minimum-jerk style path (T x 2), first row at start and last row at goal,
// plus iid N(0, noise_std^2) on every entry. `noise_seed` is ignored when
// noise_std is zero.
Matrix expert_trajectory(const TaskDescriptor& task, int length, double noise_std, std::uint64_t noise_seed);
inline Matrix expert_path(const TaskDescriptor& task) {
  return expert_trajectory(task, family_spec(task.family).length, 0.0, 0);
}

// Observation at step i is the position after the previous action (the start
// for i = 0) together with the offset to the goal.
struct Observation {
  Point position;
  Point goal_offset;
};
Observation observe(const TaskDescriptor& task, const Point& position);

// [family one-hot | normalized parameters | position, goal offset], all slots in [-1, 1].
Vector featurize(const TaskDescriptor& task, const Observation& obs);

// Contexts for every step of a trajectory (T x kContextDim).
Matrix trajectory_contexts(const TaskDescriptor& task, const Matrix& trajectory);

// Largest discrete second-difference norm over a path.
double max_second_difference(const Matrix& path);

}  // namespace priorflow::taskgen
