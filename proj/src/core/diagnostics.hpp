#pragma once

#include <cstddef>
#include <map>
#include <string>

namespace flexmsm {

// Process-wide warning sink. Hot loops may record the same category many
// times; only the first message per category is kept alongside a count.
struct WarningSummary {
  std::string first_message;
  std::size_t count = 0;
};

void record_warning(const std::string& category, const std::string& message);
std::map<std::string, WarningSummary> warnings_snapshot();
void clear_warnings();

}  // namespace flexmsm
