#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

#include "s2ig/backbone.hpp"
#include "s2ig/json.hpp"
#include "s2ig/manifest.hpp"
#include "s2ig/metrics.hpp"
#include "s2ig/report.hpp"

namespace s2ig {

inline constexpr const char* kGeneratedIndexName = "index.tsv";

struct LabeledImages {
  torch::Tensor images;  // [N, 3, S, S]
  std::vector<int> classes;
  std::vector<std::string> paths;
  nlohmann::json lineage;  // {"source", "sha256", ...}
};

// `source` is a manifest file (records of `split` are used), or a directory
// holding a generated index.tsv (image_path, class_id, source_audio), or a
// directory holding manifest.tsv. Images are resized to `size`.
LabeledImages load_labeled_images(const std::filesystem::path& source, int64_t size, Split split = Split::kTest);

struct GeneratedRecord {
  std::string image_path;  // relative to the index directory
  int class_id = 0;  // -1 when unknown (bare audio input)
  std::string source_audio;
};

void write_generated_index(const std::filesystem::path& dir, const std::vector<GeneratedRecord>& records);
std::vector<GeneratedRecord> read_generated_index(const std::filesystem::path& dir);

Matrix to_matrix(const torch::Tensor& t);

struct FeatureSet {
  Matrix features;
  Matrix probabilities;
  std::vector<int> classes;
  std::string backbone;  // description of the backbone that produced the features
  std::string provenance;
  nlohmann::json lineage;
};

FeatureSet extract_features(FeatureBackbone& backbone, const LabeledImages& images);

void save_feature_set(const std::filesystem::path& path, const FeatureSet& set);
FeatureSet load_feature_set(const std::filesystem::path& path);

struct EvaluationSettings {
  int is_splits = 10;
  std::uint64_t query_seed = 7;
  int queries_per_class = 2;
};

// IS over the fake probabilities, FID between the feature sets and the
// class-query retrieval mAP (queries drawn from the real set). Sets produced
// by different backbones are a CompatibilityError.
MetricReport compute_report(const FeatureSet& real, const FeatureSet& fake, const EvaluationSettings& settings);

}  // namespace s2ig
