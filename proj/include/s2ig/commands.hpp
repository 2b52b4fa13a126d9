#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "s2ig/experiment.hpp"
#include "s2ig/report.hpp"

namespace s2ig {

// ---- make-dataset ----------------------------------------------------------

struct MakeDatasetArgs {
  std::uint64_t seed = 7;
  int num_classes = 8;
  int per_class = 10;
  std::filesystem::path out_dir;
  int image_size = 256;
  int sample_rate_hz = 16000;
  double duration_s = 0.8;
};

struct MakeDatasetResult {
  std::filesystem::path manifest;
  std::string corpus_hash;
};

MakeDatasetResult cmd_make_dataset(const MakeDatasetArgs& args);

// ---- training --------------------------------------------------------------

// Options shared by train-sen, train-rdg and train-backbone.
struct RunArgs {
  std::optional<std::filesystem::path> config;
  std::optional<std::string> profile;
  std::vector<std::string> overrides;  // section.key=value
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> manifest;
  // Run directory; defaults to <experiment root>/<run.name>. Suffixed when taken.
  std::optional<std::filesystem::path> out;
  // Existing run directory to continue from its latest checkpoint.
  std::optional<std::filesystem::path> resume;
  // Stops after this many epochs in this invocation (the run stays resumable).
  std::optional<int> max_epochs;
};

struct TrainResult {
  std::filesystem::path run_dir;
  std::filesystem::path checkpoint;
  std::filesystem::path history;
  int epoch = 0;          // epochs completed in total
  bool finished = false;  // reached the configured epoch count
};

// Resolves the configuration of a run: the echo of `resume`, or file +
// profile + overrides + seed/manifest flags.
ExperimentConfig resolve_config(const RunArgs& args, const std::vector<std::string>& extra_overrides = {});

TrainResult cmd_train_sen(const RunArgs& args);

struct TrainRdgArgs {
  RunArgs run;
  std::optional<std::filesystem::path> sen_checkpoint;
  std::vector<std::string> ablations;  // no-dense, no-rs, no-sen
};

TrainResult cmd_train_rdg(const TrainRdgArgs& args);

struct TrainBackboneArgs {
  RunArgs run;
  std::filesystem::path out;  // checkpoint file
};

// Trains the desk-scale evaluation backbone on the train split.
std::filesystem::path cmd_train_backbone(const TrainBackboneArgs& args);

// ---- generate --------------------------------------------------------------

struct GenerateArgs {
  std::filesystem::path checkpoint;  // RDG checkpoint or run directory
  std::optional<std::filesystem::path> manifest;
  std::string split = "test";  // manifest records to use: train, test or all
  std::vector<std::filesystem::path> audio;
  int class_id = -1;           // label recorded for bare audio inputs
  std::filesystem::path out_dir;
  std::uint64_t seed = 7;
  int per_caption = 1;
  bool all_scales = false;
  std::optional<std::filesystem::path> sen_checkpoint;  // relocated SEN file
};

struct GenerateResult {
  std::filesystem::path out_dir;
  std::vector<std::filesystem::path> images;  // final-scale images
  int failed = 0;
};

GenerateResult cmd_generate(const GenerateArgs& args);

// ---- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  // Image sources (generated directory, manifest or corpus directory) or
  // feature cache files.
  std::filesystem::path real;
  std::filesystem::path fake;
  std::optional<std::filesystem::path> config;
  std::optional<std::string> profile;
  std::vector<std::string> overrides;
  std::optional<std::filesystem::path> backbone;
  std::optional<std::filesystem::path> backbone_script;
  std::string real_split = "test";
  std::filesystem::path out;  // report path, suffixed when taken
  std::optional<std::filesystem::path> save_features;  // directory for feature caches
};

struct EvaluateResult {
  std::filesystem::path report_path;
  MetricReport report;
};

EvaluateResult cmd_evaluate(const EvaluateArgs& args);

}  // namespace s2ig
