#include "s2ig/report.hpp"

#include <fstream>

#include "s2ig/backbone.hpp"
#include "s2ig/error.hpp"

namespace s2ig {
namespace fs = std::filesystem;

namespace {

constexpr double kTolerance = 1e-9;

const nlohmann::json& field(const nlohmann::json& j, const char* name) {
  if (!j.contains(name)) throw ValidationError(std::string("report: missing field '") + name + "'");
  return j.at(name);
}

double number(const nlohmann::json& j, const char* name) {
  const auto& v = field(j, name);
  if (!v.is_number()) throw ValidationError(std::string("report: '") + name + "' must be a number");
  return v.get<double>();
}

int64_t integer(const nlohmann::json& j, const char* name, int64_t min) {
  const auto& v = field(j, name);
  if (!v.is_number_integer()) throw ValidationError(std::string("report: '") + name + "' must be an integer");
  const auto value = v.get<int64_t>();
  if (value < min) {
    throw ValidationError(std::string("report: '") + name + "' must be >= " + std::to_string(min));
  }
  return value;
}

const std::string& text(const nlohmann::json& j, const char* name) {
  const auto& v = field(j, name);
  if (!v.is_string()) throw ValidationError(std::string("report: '") + name + "' must be a string");
  return v.get_ref<const std::string&>();
}

}  // namespace

nlohmann::json report_to_json(const MetricReport& r) {
  return nlohmann::json{{"format_version", kReportFormatVersion},
                        {"is_mean", r.is_mean},
                        {"is_std", r.is_std},
                        {"fid", r.fid},
                        {"map", r.map},
                        {"is_splits", r.is_splits},
                        {"query_pool_seed", r.query_pool_seed},
                        {"queries_per_class", r.queries_per_class},
                        {"num_queries", r.num_queries},
                        {"num_real", r.num_real},
                        {"num_fake", r.num_fake},
                        {"image_size", r.image_size},
                        {"backbone", {{"provenance", r.backbone_provenance}, {"description", r.backbone_description}}},
                        {"config", r.config},
                        {"inputs", r.inputs}};
}

void validate_report_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("report: document must be a JSON object");
  if (integer(j, "format_version", 1) != kReportFormatVersion) {
    throw ValidationError("report: unsupported format_version");
  }
  const double is_mean = number(j, "is_mean");
  if (!(is_mean >= 1.0 - kTolerance)) throw ValidationError("report: 'is_mean' must be >= 1");
  if (!(number(j, "is_std") >= 0.0)) throw ValidationError("report: 'is_std' must be >= 0");
  if (!(number(j, "fid") >= 0.0)) throw ValidationError("report: 'fid' must be >= 0");
  const double map = number(j, "map");
  if (!(map >= 0.0 && map <= 1.0 + kTolerance)) throw ValidationError("report: 'map' must lie in [0, 1]");
  integer(j, "is_splits", 1);
  integer(j, "query_pool_seed", 0);
  integer(j, "queries_per_class", 1);
  integer(j, "num_queries", 1);
  integer(j, "num_real", 2);
  integer(j, "num_fake", 2);
  integer(j, "image_size", 1);
  const auto& backbone = field(j, "backbone");
  if (!backbone.is_object()) throw ValidationError("report: 'backbone' must be an object");
  const auto& provenance = text(backbone, "provenance");
  if (provenance != kProvenanceDesk && provenance != kProvenancePretrained) {
    throw ValidationError("report: unknown backbone provenance '" + provenance + "'");
  }
  text(backbone, "description");
  text(j, "config");
  if (!field(j, "inputs").is_object()) throw ValidationError("report: 'inputs' must be an object");
}

MetricReport report_from_json(const nlohmann::json& j) {
  validate_report_json(j);
  MetricReport r;
  r.is_mean = j.at("is_mean").get<double>();
  r.is_std = j.at("is_std").get<double>();
  r.fid = j.at("fid").get<double>();
  r.map = j.at("map").get<double>();
  r.is_splits = j.at("is_splits").get<int>();
  r.query_pool_seed = j.at("query_pool_seed").get<std::uint64_t>();
  r.queries_per_class = j.at("queries_per_class").get<int>();
  r.num_queries = j.at("num_queries").get<int64_t>();
  r.num_real = j.at("num_real").get<int64_t>();
  r.num_fake = j.at("num_fake").get<int64_t>();
  r.image_size = j.at("image_size").get<int64_t>();
  r.backbone_provenance = j.at("backbone").at("provenance").get<std::string>();
  r.backbone_description = j.at("backbone").at("description").get<std::string>();
  r.config = j.at("config").get<std::string>();
  r.inputs = j.at("inputs");
  return r;
}

void write_report(const fs::path& path, const MetricReport& report) {
  const auto j = report_to_json(report);
  validate_report_json(j);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

MetricReport read_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return report_from_json(j);
}

}  // namespace s2ig
