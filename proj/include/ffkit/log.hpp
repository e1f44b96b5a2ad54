#pragma once

// Minimal logging hook. The library never links a logging backend; the CLI
// installs a sink that forwards to spdlog.

#include <functional>
#include <iostream>
#include <string>
#include <string_view>

namespace ffkit {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

using LogSink = std::function<void(LogLevel, std::string_view)>;

namespace detail {
inline LogSink& log_sink() {
  static LogSink sink = [](LogLevel level, std::string_view msg) {
    if (level <= LogLevel::warn) std::cerr << (level == LogLevel::error ? "error: " : "warning: ") << msg << '\n';
  };
  return sink;
}
}  // namespace detail

/// Replaces the process-wide sink; pass an empty function to silence output.
inline void set_log_sink(LogSink sink) { detail::log_sink() = std::move(sink); }

inline void log_message(LogLevel level, std::string_view msg) {
  if (auto& sink = detail::log_sink()) sink(level, msg);
}

inline void log_warn(std::string_view msg) { log_message(LogLevel::warn, msg); }
inline void log_info(std::string_view msg) { log_message(LogLevel::info, msg); }
inline void log_debug(std::string_view msg) { log_message(LogLevel::debug, msg); }

}  // namespace ffkit
