#include "dackgr/log.h"

#include <atomic>
#include <iostream>
#include <mutex>

namespace dackgr {
namespace {

std::atomic<LogLevel> g_level{LogLevel::kWarning};
std::mutex g_mutex;

}  // namespace

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void log_warning(const std::string& message) {
  if (g_level < LogLevel::kWarning) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << "WARNING: " << message << '\n';
}

void log_info(const std::string& message) {
  if (g_level < LogLevel::kInfo) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << message << '\n';
}

}  // namespace dackgr
