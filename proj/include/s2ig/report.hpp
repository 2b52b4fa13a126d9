#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "s2ig/json.hpp"

namespace s2ig {

inline constexpr int kReportFormatVersion = 1;

struct MetricReport {
  double is_mean = 1.0;
  double is_std = 0.0;
  double fid = 0.0;
  double map = 0.0;
  int is_splits = 10;
  std::uint64_t query_pool_seed = 0;
  int queries_per_class = 2;
  int64_t num_queries = 0;
  int64_t num_real = 0;
  int64_t num_fake = 0;
  int64_t image_size = 0;
  std::string backbone_provenance;
  std::string backbone_description;
  std::string config;           // canonical config echo
  nlohmann::json inputs = nlohmann::json::object();  // lineage of real/fake inputs
};

nlohmann::json report_to_json(const MetricReport& report);

// Checks the document against the report schema: required fields, types and
// ranges (fid >= 0, 0 <= map <= 1, is_mean >= 1, known provenance).
// Throws ValidationError naming the first offending field.
void validate_report_json(const nlohmann::json& j);

MetricReport report_from_json(const nlohmann::json& j);

void write_report(const std::filesystem::path& path, const MetricReport& report);
MetricReport read_report(const std::filesystem::path& path);

}  // namespace s2ig
