#pragma once

#include <span>

#include "priorflow/nn/matrix.hpp"

namespace priorflow {

// H x A block of consecutive actions; row h is the action at step h.
using ActionChunk = Matrix;

void check_chunk(const ActionChunk& chunk, const char* what);
void check_same_shape(const ActionChunk& a, const ActionChunk& b, const char* what);

inline RowVector flatten(const ActionChunk& chunk) {
  return Eigen::Map<const RowVector>(chunk.data(), chunk.size());
}

inline ActionChunk unflatten(std::span<const double> flat, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(flat.data(), rows, cols);
}

}  // namespace priorflow
