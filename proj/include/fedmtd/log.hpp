#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace fedmtd::log {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Level comes from FEDMTD_LOG_LEVEL (error|warn|info|debug); default warn.
inline Level threshold() {
  static const Level lvl = [] {
    const char* e = std::getenv("FEDMTD_LOG_LEVEL");
    if (e == nullptr) return Level::Warn;
    if (std::strcmp(e, "error") == 0) return Level::Error;
    if (std::strcmp(e, "warn") == 0) return Level::Warn;
    if (std::strcmp(e, "info") == 0) return Level::Info;
    if (std::strcmp(e, "debug") == 0) return Level::Debug;
    return Level::Warn;
  }();
  return lvl;
}

inline void emit(Level lvl, const std::string& msg) {
  if (lvl > threshold()) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::fprintf(stderr, "[fedmtd:%s] %s\n", names[static_cast<int>(lvl)], msg.c_str());
}

inline void error(const std::string& msg) { emit(Level::Error, msg); }
inline void warn(const std::string& msg) { emit(Level::Warn, msg); }
inline void info(const std::string& msg) { emit(Level::Info, msg); }
inline void debug(const std::string& msg) { emit(Level::Debug, msg); }

}  // namespace fedmtd::log
