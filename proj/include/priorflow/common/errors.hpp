#pragma once

#include <stdexcept>
#include <string>

namespace priorflow {

// Input rejected by a precondition check (shape, range, empty sequence).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Projection collapsed to the zero vector and cannot be normalized.
class DegenerateEmbedding : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A loss, gradient or parameter went NaN/Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training aborted because the loss stopped being finite.
class Divergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File failed magic/version/checksum/length validation.
class CorruptFile : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A required artifact (checkpoint, bank, dataset) is absent.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Artifact was produced against a different task suite.
class FingerprintMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidInput(what);
}

}  // namespace priorflow
