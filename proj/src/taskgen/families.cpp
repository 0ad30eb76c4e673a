#include "priorflow/taskgen/families.hpp"

#include <cmath>
#include <numbers>

#include "priorflow/common/errors.hpp"
#include "priorflow/common/rng.hpp"

namespace priorflow::taskgen {

namespace {

Box box(double x0, double y0, double x1, double y1) { return {Point(x0, y0), Point(x1, y1)}; }

const std::array<FamilySpec, kNumFamilies> kFamilies = {{
    {Family::kReach, "reach", 32, box(0.1, 0.1, 0.4, 0.4), box(0.6, 0.6, 0.9, 0.9), box(0.2, 0.2, 0.8, 0.8), 0.05, 0.2, 0.0075},
    {Family::kArc, "arc", 40, box(0.1, 0.1, 0.4, 0.4), box(0.6, 0.1, 0.9, 0.4), box(0.3, 0.6, 0.7, 0.9), 0.05, 0.2, 0.0085},
    {Family::kPickPlace, "pick_place", 48, box(0.1, 0.1, 0.4, 0.4), box(0.6, 0.6, 0.9, 0.9), box(0.4, 0.2, 0.6, 0.5), 0.05, 0.2, 0.0140},
    {Family::kOutBack, "out_back", 40, box(0.1, 0.1, 0.4, 0.4), box(0.1, 0.1, 0.4, 0.4), box(0.6, 0.5, 0.9, 0.9), 0.05, 0.2, 0.0200},
    {Family::kHover, "hover", 40, box(0.1, 0.1, 0.4, 0.4), box(0.6, 0.5, 0.9, 0.9), box(0.2, 0.2, 0.8, 0.8), 0.05, 0.2, 0.0095},
    {Family::kZigzag, "zigzag", 56, box(0.1, 0.1, 0.4, 0.4), box(0.6, 0.6, 0.9, 0.9), box(0.2, 0.2, 0.8, 0.8), 0.05, 0.2, 0.0110},
    {Family::kWave, "wave", 48, box(0.1, 0.1, 0.4, 0.4), box(0.6, 0.6, 0.9, 0.9), box(0.2, 0.2, 0.8, 0.8), 0.05, 0.2, 0.0120},
    {Family::kCorner, "corner", 40, box(0.1, 0.1, 0.4, 0.4), box(0.6, 0.6, 0.9, 0.9), box(0.2, 0.2, 0.8, 0.8), 0.05, 0.2, 0.0145},
}};

double min_jerk(double tau) { return tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau); }

Point draw(const Box& b, Rng& rng) { return Point(uniform(rng, b.lo.x(), b.hi.x()), uniform(rng, b.lo.y(), b.hi.y())); }

// Appends `steps` points moving from `from` to `to`; the start point itself is not emitted.
void segment(Matrix& path, int& row, const Point& from, const Point& to, int steps) {
  for (int i = 1; i <= steps; ++i) path.row(row++) = (from + (to - from) * min_jerk(static_cast<double>(i) / steps)).transpose();
}

void dwell(Matrix& path, int& row, const Point& at, int steps) {
  for (int i = 0; i < steps; ++i) path.row(row++) = at.transpose();
}

Point unit_normal(const Point& from, const Point& to) {
  const Point d = (to - from).normalized();
  return Point(-d.y(), d.x());
}

double to_unit(double v, double lo, double hi) { return 2.0 * (v - lo) / (hi - lo) - 1.0; }

}  // namespace

const std::array<FamilySpec, kNumFamilies>& families() { return kFamilies; }

const FamilySpec& family_spec(Family f) {
  const int i = family_index(f);
  require(i >= 0 && i < kNumFamilies, "unknown task family");
  return kFamilies[static_cast<std::size_t>(i)];
}

Family family_from_name(std::string_view name) {
  for (const auto& f : kFamilies)
    if (name == f.name) return f.family;
  throw InvalidInput("unknown task family '" + std::string(name) + "'");
}

bool in_declared_ranges(const TaskDescriptor& task) {
  const auto& f = family_spec(task.family);
  return f.start.contains(task.start) && f.goal.contains(task.goal) && f.via.contains(task.via) &&
         task.scale >= f.scale_lo && task.scale <= f.scale_hi;
}

Region region_of(const TaskDescriptor& task) {
  return task.start.y() >= kHeldOutStartY ? Region::kHeldOut : Region::kSeen;
}

TaskDescriptor sample_task(Family family, std::uint64_t seed, Region region) {
  const auto& f = family_spec(family);
  Rng rng(derive_seed(seed, "task"));
  TaskDescriptor t;
  t.family = family;
  t.instance_seed = seed;
  Box start = f.start;
  if (region == Region::kSeen) start.hi.y() = kHeldOutStartY;
  if (region == Region::kHeldOut) start.lo.y() = kHeldOutStartY;
  t.start = draw(start, rng);
  // Upper edge of the seen band is exclusive.
  if (region == Region::kSeen && t.start.y() >= kHeldOutStartY) t.start.y() = std::nextafter(kHeldOutStartY, 0.0);
  t.goal = draw(f.goal, rng);
  t.via = draw(f.via, rng);
  t.scale = uniform(rng, f.scale_lo, f.scale_hi);
  return t;
}

Matrix expert_trajectory(const TaskDescriptor& task, int length, double noise_std, std::uint64_t noise_seed) {
  const auto& f = family_spec(task.family);
  require(length == f.length, std::string("expert_trajectory: family ") + f.name + " has length " +
                                  std::to_string(f.length));
  require(noise_std >= 0.0 && std::isfinite(noise_std), "expert_trajectory: noise must be non-negative");
  Matrix p(length, kActionDim);
  p.row(0) = task.start.transpose();
  int row = 1;
  const Point& s = task.start;
  const Point& g = task.goal;
  const Point& v = task.via;
  switch (task.family) {
    case Family::kReach:
      segment(p, row, s, g, 31);
      break;
    case Family::kArc:
      for (int i = 1; i <= 39; ++i) {
        const double u = min_jerk(i / 39.0);
        p.row(row++) = ((1 - u) * (1 - u) * s + 2 * u * (1 - u) * v + u * u * g).transpose();
      }
      break;
    case Family::kPickPlace:
      segment(p, row, s, v, 20);
      dwell(p, row, v, 7);
      segment(p, row, v, g, 20);
      break;
    case Family::kOutBack:
      segment(p, row, s, v, 20);
      segment(p, row, v, g, 19);
      break;
    case Family::kHover:
      dwell(p, row, s, 11);
      segment(p, row, s, g, 28);
      break;
    case Family::kZigzag: {
      const Point n = unit_normal(s, g) * task.scale;
      const Point a = s + (g - s) / 3.0 + n;
      const Point b = s + 2.0 * (g - s) / 3.0 - n;
      segment(p, row, s, a, 18);
      segment(p, row, a, b, 18);
      segment(p, row, b, g, 19);
      break;
    }
    case Family::kWave: {
      const Point n = unit_normal(s, g) * task.scale;
      for (int i = 1; i <= 47; ++i) {
        const double u = min_jerk(i / 47.0);
        p.row(row++) = (s + (g - s) * u + n * std::sin(2.0 * std::numbers::pi * u)).transpose();
      }
      break;
    }
    case Family::kCorner: {
      const Point c(g.x(), s.y());
      segment(p, row, s, c, 20);
      segment(p, row, c, g, 19);
      break;
    }
  }
  if (noise_std > 0.0) {
    Rng rng(noise_seed);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] += noise_std * standard_normal(rng);
  }
  return p;
}

Observation observe(const TaskDescriptor& task, const Point& position) { return {position, task.goal - position}; }

Vector featurize(const TaskDescriptor& task, const Observation& obs) {
  const auto& f = family_spec(task.family);
  Vector c = Vector::Zero(kContextDim);
  c(family_index(task.family)) = 1.0;
  int i = kNumFamilies;
  for (const Point* p : {&task.start, &task.goal, &task.via}) {
    c(i++) = 2.0 * p->x() - 1.0;
    c(i++) = 2.0 * p->y() - 1.0;
  }
  c(i++) = to_unit(task.scale, f.scale_lo, f.scale_hi);
  c(i++) = 2.0 * obs.position.x() - 1.0;
  c(i++) = 2.0 * obs.position.y() - 1.0;
  c(i++) = obs.goal_offset.x();
  c(i++) = obs.goal_offset.y();
  return c;
}

Matrix trajectory_contexts(const TaskDescriptor& task, const Matrix& trajectory) {
  Matrix out(trajectory.rows(), kContextDim);
  for (Eigen::Index i = 0; i < trajectory.rows(); ++i) {
    const Point pos = i == 0 ? task.start : Point(trajectory.row(i - 1).transpose());
    out.row(i) = featurize(task, observe(task, pos)).transpose();
  }
  return out;
}

double max_second_difference(const Matrix& path) {
  double worst = 0.0;
  for (Eigen::Index i = 1; i + 1 < path.rows(); ++i)
    worst = std::max(worst, (path.row(i + 1) - 2.0 * path.row(i) + path.row(i - 1)).norm());
  return worst;
}

}  // namespace priorflow::taskgen
