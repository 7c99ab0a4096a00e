#include "irtimpute/logging.hpp"

#include <iostream>
#include <mutex>

namespace irtimpute {

namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

LogSink& current_sink() {
  static LogSink sink;
  return sink;
}

LogLevel& minimum_level() {
  static LogLevel level = LogLevel::Warning;
  return level;
}

const char* label(LogLevel level) {
  switch (level) {
    case LogLevel::Debug:
      return "debug";
    case LogLevel::Info:
      return "info";
    case LogLevel::Warning:
      return "warning";
    case LogLevel::Error:
      return "error";
  }
  return "log";
}

}  // namespace

void set_log_sink(LogSink sink) {
  std::lock_guard lock(sink_mutex());
  current_sink() = std::move(sink);
}

void set_log_level(LogLevel minimum) {
  std::lock_guard lock(sink_mutex());
  minimum_level() = minimum;
}

void log(LogLevel level, std::string_view message) {
  std::lock_guard lock(sink_mutex());
  if (current_sink()) {
    current_sink()(level, message);
    return;
  }
  if (level < minimum_level()) return;
  std::cerr << "irtimpute " << label(level) << ": " << message << '\n';
}

}  // namespace irtimpute
