#include "core/diagnostics.hpp"

#include <mutex>

namespace flexmsm {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

std::map<std::string, WarningSummary>& sink() {
  static std::map<std::string, WarningSummary> s;
  return s;
}

}  // namespace

void record_warning(const std::string& category, const std::string& message) {
  std::lock_guard<std::mutex> lock(sink_mutex());
  auto& entry = sink()[category];
  if (entry.count == 0) entry.first_message = message;
  ++entry.count;
}

std::map<std::string, WarningSummary> warnings_snapshot() {
  std::lock_guard<std::mutex> lock(sink_mutex());
  return sink();
}

void clear_warnings() {
  std::lock_guard<std::mutex> lock(sink_mutex());
  sink().clear();
}

}  // namespace flexmsm
