#pragma once

#include <Eigen/Dense>

namespace priorflow {

// Row-major so that flattening an H x A chunk walks actions step by step.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace priorflow
