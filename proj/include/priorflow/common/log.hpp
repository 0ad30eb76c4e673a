#pragma once

#include <atomic>
#include <iostream>
#include <string_view>

namespace priorflow {

inline std::atomic<bool>& log_quiet_flag() {
  static std::atomic<bool> quiet{false};
  return quiet;
}

inline void set_log_quiet(bool quiet) { log_quiet_flag() = quiet; }

inline void log_warning(std::string_view msg) {
  if (!log_quiet_flag()) std::clog << "warning: " << msg << '\n';
}

inline void log_info(std::string_view msg) {
  if (!log_quiet_flag()) std::clog << msg << '\n';
}

}  // namespace priorflow
