#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <utility>

namespace turnroute {

using LogSink = std::function<void(const std::string&)>;

namespace detail {
inline LogSink& log_sink() {
  static LogSink sink = [](const std::string& msg) { std::clog << "warning: " << msg << '\n'; };
  return sink;
}
inline std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// Replace the warning sink; returns the previous one.
inline LogSink set_log_sink(LogSink sink) {
  std::lock_guard lock(detail::log_mutex());
  return std::exchange(detail::log_sink(), std::move(sink));
}

inline void log_warning(const std::string& msg) {
  std::lock_guard lock(detail::log_mutex());
  if (detail::log_sink()) detail::log_sink()(msg);
}

}  // namespace turnroute
