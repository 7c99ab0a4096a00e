#pragma once

#include <functional>
#include <string_view>

namespace irtimpute {

enum class LogLevel { Debug = 0, Info = 1, Warning = 2, Error = 3 };

using LogSink = std::function<void(LogLevel, std::string_view)>;

// Replaces the process-wide sink (stderr by default). Thread-safe.
void set_log_sink(LogSink sink);
void set_log_level(LogLevel minimum);

void log(LogLevel level, std::string_view message);
inline void log_info(std::string_view m) { log(LogLevel::Info, m); }
inline void log_warning(std::string_view m) { log(LogLevel::Warning, m); }

}  // namespace irtimpute
