#include "s2ig/log.hpp"

#include <spdlog/spdlog.h>

namespace s2ig::log {

void info(const std::string& message) { spdlog::info("{}", message); }

void warn(const std::string& message) { spdlog::warn("{}", message); }

void set_quiet(bool quiet) { spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info); }

}  // namespace s2ig::log
