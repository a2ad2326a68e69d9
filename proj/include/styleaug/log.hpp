#pragma once

#include <atomic>
#include <iostream>
#include <string>

namespace styleaug {

enum class LogLevel { debug = 0, info = 1, warning = 2, error = 3, quiet = 4 };

inline std::atomic<LogLevel>& log_level() {
  static std::atomic<LogLevel> level{LogLevel::info};
  return level;
}

inline void log(LogLevel level, const std::string& msg) {
  if (level < log_level().load()) return;
  static const char* tags[] = {"debug", "info", "warning", "error"};
  std::clog << "[" << tags[static_cast<int>(level)] << "] " << msg << '\n';
}

inline void log_info(const std::string& msg) { log(LogLevel::info, msg); }
inline void log_warning(const std::string& msg) { log(LogLevel::warning, msg); }

}  // namespace styleaug
