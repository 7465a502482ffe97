#pragma once

#include <string_view>

namespace msar {

enum class LogLevel { kDebug = 0, kInfo = 1, kWarning = 2, kError = 3, kSilent = 4 };

// Process-wide threshold; messages below it are dropped. Defaults to kInfo,
// or to the value of MSAR_LOG_LEVEL (debug|info|warning|error|silent).
void set_log_level(LogLevel level);
LogLevel log_level();

void log(LogLevel level, std::string_view message);
inline void log_info(std::string_view m) { log(LogLevel::kInfo, m); }
inline void log_warning(std::string_view m) { log(LogLevel::kWarning, m); }
inline void log_debug(std::string_view m) { log(LogLevel::kDebug, m); }

}  // namespace msar
