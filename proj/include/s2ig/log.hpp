#pragma once

#include <string>

namespace s2ig::log {

// Thin wrappers so translation units that include torch (which bundles its
// own fmt) never see spdlog's headers.
void info(const std::string& message);
void warn(const std::string& message);
void set_quiet(bool quiet);

}  // namespace s2ig::log
