#pragma once

#include <torch/script.h>
#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <span>
#include <string>

#include "s2ig/rng.hpp"

namespace s2ig {

class Corpus;

inline constexpr const char* kProvenanceDesk = "desk-scale-trained";
inline constexpr const char* kProvenancePretrained = "pretrained-large";

// Image -> feature vector. The image encoder of the embedding network and the
// evaluation backbone both build on this interface.
class ImageFeatureExtractor : public torch::nn::Module {
 public:
  virtual torch::Tensor forward(const torch::Tensor& images) = 0;  // [N,3,H,W] -> [N,F]
  virtual int64_t feature_dim() const = 0;
  virtual std::string provenance() const = 0;
};

struct ConvFeatureExtractorOptions {
  // Inputs are box-downsampled to this size before the first convolution.
  int64_t working_size = 64;
  int64_t channels = 16;
};

// Four conv / batch-norm / LeakyReLU / 2x2 max-pool blocks and global average
// pooling; feature size is 4 * channels.
class ConvFeatureExtractor : public ImageFeatureExtractor {
 public:
  explicit ConvFeatureExtractor(ConvFeatureExtractorOptions options = {});

  torch::Tensor forward(const torch::Tensor& images) override;
  int64_t feature_dim() const override { return 4 * options_.channels; }
  std::string provenance() const override { return kProvenanceDesk; }
  const ConvFeatureExtractorOptions& options() const { return options_; }

 private:
  ConvFeatureExtractorOptions options_;
  torch::nn::Sequential layers_{nullptr};
};

// A scripted module whose forward(images) returns (logits, features). This is
// how a large pretrained network (e.g. an exported Inception-v3) is plugged in.
class TorchScriptFeatureExtractor : public ImageFeatureExtractor {
 public:
  TorchScriptFeatureExtractor(const std::filesystem::path& path, int64_t input_size, int64_t feature_dim);

  torch::Tensor forward(const torch::Tensor& images) override;
  std::pair<torch::Tensor, torch::Tensor> logits_and_features(const torch::Tensor& images);
  int64_t feature_dim() const override { return feature_dim_; }
  std::string provenance() const override { return kProvenancePretrained; }
  const std::string& file_hash() const { return hash_; }

 private:
  torch::jit::Module module_;
  int64_t input_size_;
  int64_t feature_dim_;
  std::string hash_;
};

// Desk-scale stand-in for an ImageNet classifier: conv features + linear head.
class DeskClassifierImpl : public torch::nn::Module {
 public:
  DeskClassifierImpl(int num_classes, ConvFeatureExtractorOptions options = {});

  torch::Tensor forward(const torch::Tensor& images);  // logits
  std::shared_ptr<ConvFeatureExtractor> extractor() const { return extractor_; }
  torch::nn::Linear head() const { return head_; }
  int num_classes() const { return num_classes_; }

 private:
  int num_classes_;
  std::shared_ptr<ConvFeatureExtractor> extractor_;
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(DeskClassifier);

struct BackboneOutput {
  torch::Tensor probabilities;  // [N, K], rows sum to 1
  torch::Tensor features;       // [N, F]
};

// Classifier head + penultimate features, used by the evaluation metrics.
class FeatureBackbone {
 public:
  virtual ~FeatureBackbone() = default;
  virtual BackboneOutput run(const torch::Tensor& images) = 0;
  virtual std::string provenance() const = 0;
  virtual std::string description() const = 0;
  virtual int64_t num_classes() const = 0;
  virtual int64_t feature_dim() const = 0;
};

struct DeskBackboneSchedule {
  int epochs = 40;
  int64_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 7;
  ConvFeatureExtractorOptions extractor;
};

class DeskBackbone : public FeatureBackbone {
 public:
  explicit DeskBackbone(DeskClassifier model, std::string fingerprint = {});

  BackboneOutput run(const torch::Tensor& images) override;
  std::string provenance() const override { return kProvenanceDesk; }
  std::string description() const override;
  int64_t num_classes() const override { return model_->num_classes(); }
  int64_t feature_dim() const override { return model_->extractor()->feature_dim(); }
  DeskClassifier model() const { return model_; }

  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<DeskBackbone> load(const std::filesystem::path& path);

 private:
  DeskClassifier model_;
  std::string fingerprint_;
};

// Trains the desk classifier on the given records (real images, 256 px).
std::unique_ptr<DeskBackbone> train_desk_backbone(const Corpus& corpus,
                                                  std::span<const std::size_t> records,
                                                  const DeskBackboneSchedule& schedule);

class TorchScriptBackbone : public FeatureBackbone {
 public:
  TorchScriptBackbone(const std::filesystem::path& path, int64_t input_size, int64_t num_classes,
                      int64_t feature_dim);

  BackboneOutput run(const torch::Tensor& images) override;
  std::string provenance() const override { return kProvenancePretrained; }
  std::string description() const override;
  int64_t num_classes() const override { return num_classes_; }
  int64_t feature_dim() const override { return extractor_->feature_dim(); }

 private:
  std::shared_ptr<TorchScriptFeatureExtractor> extractor_;
  std::filesystem::path path_;
  int64_t num_classes_;
};

}  // namespace s2ig
