#include "priorflow/flow/action_chunk.hpp"

#include <string>

#include "priorflow/common/errors.hpp"

namespace priorflow {

void check_chunk(const ActionChunk& chunk, const char* what) {
  require(chunk.rows() >= 1 && chunk.cols() >= 1, std::string(what) + ": chunk must be at least 1 x 1");
  require(chunk.allFinite(), std::string(what) + ": chunk has non-finite entries");
}

void check_same_shape(const ActionChunk& a, const ActionChunk& b, const char* what) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
              " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

}  // namespace priorflow
