#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "s2ig/audio.hpp"
#include "s2ig/backbone.hpp"
#include "s2ig/evaluation.hpp"
#include "s2ig/rdg.hpp"
#include "s2ig/sen.hpp"

namespace s2ig {

inline constexpr const char* kDataRootEnv = "S2IG_DATA_ROOT";
inline constexpr const char* kExperimentRootEnv = "S2IG_EXPERIMENT_ROOT";
inline constexpr const char* kConfigEchoName = "config.ini";

// A documented configuration key. Defaults depend on the profile.
struct ConfigKey {
  const char* section;
  const char* name;
  const char* ci_default;
  const char* full_default;
  const char* help;
};

// Every accepted key, in echo order.
const std::vector<ConfigKey>& config_keys();

// Sectioned key/value configuration:
//   [run] [data] [sen] [rdg] [eval]
// Values start from the profile defaults ("ci" or "full"), then the file,
// then `section.key=value` overrides. Unknown keys and sections are rejected.
class ExperimentConfig {
 public:
  static ExperimentConfig defaults(const std::string& profile = "ci");
  // profile: explicit override; otherwise [run] profile from the file, else ci.
  static ExperimentConfig load(const std::optional<std::filesystem::path>& file,
                               const std::optional<std::string>& profile = std::nullopt,
                               const std::vector<std::string>& overrides = {});
  static ExperimentConfig parse(const std::string& text, const std::string& origin,
                                const std::optional<std::string>& profile = std::nullopt,
                                const std::vector<std::string>& overrides = {});

  // "section.key=value"
  void apply_override(const std::string& assignment);
  void set(const std::string& section, const std::string& key, const std::string& value);

  const std::string& profile() const { return profile_; }
  bool has(const std::string& section, const std::string& key) const;
  const std::string& get(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key) const;
  int64_t get_int(const std::string& section, const std::string& key) const;
  double get_double(const std::string& section, const std::string& key) const;
  bool get_bool(const std::string& section, const std::string& key) const;
  std::vector<int64_t> get_int_list(const std::string& section, const std::string& key) const;

  std::uint64_t seed() const;
  FrontendConfig frontend() const;
  // Resolved manifest path ($S2IG_DATA_ROOT for relative paths), empty when unset.
  std::filesystem::path manifest() const;
  SenOptions sen_options() const;
  SenSchedule sen_schedule() const;
  RdgOptions rdg_options() const;  // condition_dim left at the configured value (0 = automatic)
  RdgSchedule rdg_schedule() const;
  AblationFlags ablation_flags() const;
  EvaluationSettings eval_settings() const;
  DeskBackboneSchedule backbone_schedule() const;

  // Parses every typed value and runs the option validators.
  void validate() const;

  // Canonical text: sections and keys in the documented order, one
  // "key = value" line each. Parsing the echo reproduces the config.
  std::string echo() const;
  std::string hash() const;

 private:
  std::string profile_ = "ci";
  std::map<std::string, std::string> values_;  // "section.key" -> value
};

// Parent directory for new runs: $S2IG_EXPERIMENT_ROOT, else ./experiments.
std::filesystem::path experiment_root();

// Layout of one run:
//   config.ini  run.json  checkpoints/  samples/  reports/  *_history.csv
class ExperimentDir {
 public:
  // Creates `requested`, or `requested-1`, `requested-2`, ... when it already
  // exists, so a run never overwrites another run's files.
  static ExperimentDir create(const std::filesystem::path& requested);
  // Opens an existing run for resumption.
  static ExperimentDir open(const std::filesystem::path& path);

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path checkpoints() const { return path_ / "checkpoints"; }
  std::filesystem::path samples() const { return path_ / "samples"; }
  std::filesystem::path reports() const { return path_ / "reports"; }
  std::filesystem::path config_echo() const { return path_ / kConfigEchoName; }
  std::filesystem::path run_info() const { return path_ / "run.json"; }

  void write_config(const ExperimentConfig& config) const;
  ExperimentConfig read_config() const;

 private:
  explicit ExperimentDir(std::filesystem::path path) : path_(std::move(path)) {}
  std::filesystem::path path_;
};

// First free path among `path`, `stem-1.ext`, `stem-2.ext`, ...
std::filesystem::path unique_path(const std::filesystem::path& path);

}  // namespace s2ig
