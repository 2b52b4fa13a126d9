#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "s2ig/audio.hpp"
#include "s2ig/manifest.hpp"
#include "s2ig/rng.hpp"

namespace s2ig {

inline constexpr std::array<int64_t, 3> kImageScales{64, 128, 256};
inline constexpr int64_t kAugmentResize = 304;

struct PairedSample {
  Spectrogram spectrogram;
  std::map<int64_t, torch::Tensor> images;  // scale -> [3, s, s], one source image
  int class_id = 0;
  Split split = Split::kTrain;
  bool is_synthetic = false;
};

struct SpeechBatch {
  torch::Tensor frames;   // [B, T_max, num_mel], padded with log(floor)
  torch::Tensor lengths;  // [B], int64
};

// A manifest loaded into memory: spectrograms and all image scales.
class Corpus {
 public:
  static Corpus load(const std::filesystem::path& manifest, const FrontendConfig& frontend,
                     std::optional<int> num_classes = std::nullopt);

  std::size_t size() const { return samples_.size(); }
  const PairedSample& sample(std::size_t i) const { return samples_.at(i); }
  const ManifestEntry& entry(std::size_t i) const { return entries_.at(i); }
  const std::vector<ManifestEntry>& entries() const { return entries_; }
  int num_classes() const { return num_classes_; }
  const FrontendConfig& frontend() const { return frontend_; }
  // SHA-256 of the manifest text; recorded in checkpoints for lineage.
  const std::string& fingerprint() const { return fingerprint_; }

  std::vector<std::size_t> indices(Split split) const;
  std::vector<int> class_ids() const;

  SpeechBatch speech(std::span<const std::size_t> idx) const;
  torch::Tensor images(std::span<const std::size_t> idx, int64_t scale) const;
  torch::Tensor labels(std::span<const std::size_t> idx) const;

 private:
  std::vector<ManifestEntry> entries_;
  std::vector<PairedSample> samples_;
  FrontendConfig frontend_;
  int num_classes_ = 0;
  std::string fingerprint_;
};

// Random horizontal flip and random 256-px crop out of a 304-px resize.
torch::Tensor augment_images(const torch::Tensor& batch256, Rng& rng);

// Downsampled views of one batch at each requested scale.
std::map<int64_t, torch::Tensor> image_pyramid(const torch::Tensor& batch256,
                                               std::span<const int64_t> scales);

struct RelationSamplingBatch {
  std::vector<std::size_t> ground_truth;
  std::vector<std::size_t> same_class;  // RI
  std::vector<std::size_t> mismatched;  // MI
  std::vector<int> ground_truth_classes;
  std::vector<int> same_class_classes;
  std::vector<int> mismatched_classes;

  std::size_t size() const { return ground_truth.size(); }
};

// Draws, for each ground-truth record, another record of the same class and
// a record of a uniformly chosen different class. Candidates are restricted
// to `pool` (all records when empty). A class with a single candidate falls
// back to the ground truth itself as its same-class partner, with a warning.
class RelationSampler {
 public:
  RelationSampler(std::vector<int> class_of, std::span<const std::size_t> pool = {});

  RelationSamplingBatch sample(std::span<const std::size_t> ground_truth, Rng& rng) const;

 private:
  std::vector<int> class_of_;
  std::map<int, std::vector<std::size_t>> members_;
  std::vector<int> classes_;
  mutable std::set<int> warned_;
};

RelationSamplingBatch sample_relation_batch(const std::vector<ManifestEntry>& entries,
                                            std::span<const std::size_t> ground_truth, Rng& rng);

}  // namespace s2ig
