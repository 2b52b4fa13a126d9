#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "s2ig/backbone.hpp"
#include "s2ig/json.hpp"
#include "s2ig/rng.hpp"

namespace s2ig {

class Corpus;

struct SpeechEncoderOptions {
  int64_t num_mel = 40;
  int64_t conv_channels = 64;
  int64_t kernel_size = 5;
  int64_t gru_hidden = 64;
  int64_t gru_layers = 2;
  int64_t attention_dim = 64;
  int64_t embed_dim = 1024;
};

// Two 1-D convolutions over time, a bidirectional GRU stack and additive
// self-attention pooling, followed by a projection into the common space.
// Frames at or beyond a sequence's true length never influence its output.
class SpeechEncoderImpl : public torch::nn::Module {
 public:
  explicit SpeechEncoderImpl(SpeechEncoderOptions options);

  // frames [B, T, num_mel], lengths [B] (int64, 1 <= len <= T) -> [B, embed_dim]
  torch::Tensor forward(const torch::Tensor& frames, const torch::Tensor& lengths);

  const SpeechEncoderOptions& options() const { return options_; }

 private:
  SpeechEncoderOptions options_;
  torch::nn::Conv1d conv1_{nullptr};
  torch::nn::Conv1d conv2_{nullptr};
  torch::nn::GRU gru_{nullptr};
  torch::nn::Linear attention_hidden_{nullptr};
  torch::nn::Linear attention_score_{nullptr};
  torch::nn::Linear projection_{nullptr};
};
TORCH_MODULE(SpeechEncoder);

// Backbone features followed by a single linear map into the common space.
class ImageEncoderImpl : public torch::nn::Module {
 public:
  ImageEncoderImpl(std::shared_ptr<ImageFeatureExtractor> backbone, int64_t embed_dim, int64_t image_size,
                   bool freeze_backbone);

  // images [B, 3, image_size, image_size] -> [B, embed_dim]
  torch::Tensor forward(const torch::Tensor& images);

  std::shared_ptr<ImageFeatureExtractor> backbone() const { return backbone_; }
  bool frozen() const { return frozen_; }

 private:
  std::shared_ptr<ImageFeatureExtractor> backbone_;
  torch::nn::Linear projection_{nullptr};
  int64_t image_size_;
  bool frozen_;
};
TORCH_MODULE(ImageEncoder);

struct SenOptions {
  int num_classes = 0;
  int64_t embed_dim = 1024;
  int64_t image_size = 256;
  double beta = 10.0;
  bool freeze_backbone = true;
  SpeechEncoderOptions speech;
  ConvFeatureExtractorOptions backbone;
  // Optional desk backbone checkpoint whose extractor weights initialise the
  // image backbone.
  std::string backbone_checkpoint;
  // Optional scripted backbone (always frozen). Takes precedence when set.
  std::string backbone_script;
  int64_t script_input_size = 299;
  int64_t script_feature_dim = 2048;

  void validate() const;
};

void to_json(nlohmann::json& j, const SenOptions& o);
void from_json(const nlohmann::json& j, SenOptions& o);

// Image encoder, speech encoder and one perception layer per modality mapping
// embeddings to class logits.
class SpeechEmbeddingNetworkImpl : public torch::nn::Module {
 public:
  explicit SpeechEmbeddingNetworkImpl(SenOptions options);

  torch::Tensor encode_image(const torch::Tensor& images) { return image_encoder_->forward(images); }
  torch::Tensor encode_speech(const torch::Tensor& frames, const torch::Tensor& lengths) {
    return speech_encoder_->forward(frames, lengths);
  }
  torch::Tensor classify_speech(const torch::Tensor& speech) { return speech_perception_->forward(speech); }
  torch::Tensor classify_image(const torch::Tensor& image) { return image_perception_->forward(image); }

  // Parameters excluding a frozen backbone.
  std::vector<torch::Tensor> trainable_parameters() const;

  const SenOptions& options() const { return options_; }
  ImageEncoder image_encoder() const { return image_encoder_; }
  SpeechEncoder speech_encoder() const { return speech_encoder_; }

  void train(bool on = true) override;

 private:
  SenOptions options_;
  ImageEncoder image_encoder_{nullptr};
  SpeechEncoder speech_encoder_{nullptr};
  torch::nn::Linear speech_perception_{nullptr};
  torch::nn::Linear image_perception_{nullptr};
};
TORCH_MODULE(SpeechEmbeddingNetwork);

// ---- objectives ----------------------------------------------------------

// M[i][j] = 0 when i != j and class(i) == class(j), else 1. Float [n, n].
torch::Tensor class_mask(const torch::Tensor& class_ids);

// Cosine similarity S[i][j] = cos(speech_i, image_j). Zero-norm rows throw.
torch::Tensor similarity_matrix(const torch::Tensor& speech, const torch::Tensor& image);

struct MatchingLoss {
  torch::Tensor speech_to_image;  // -sum_i log P(V_i | A_i)
  torch::Tensor image_to_speech;  // -sum_i log P(A_i | V_i)
  torch::Tensor total;
};

// Masked softmax matching objective in both directions; the image-to-speech
// direction uses the transposed mask and the same beta.
MatchingLoss matching_loss(const torch::Tensor& speech, const torch::Tensor& image, const torch::Tensor& mask,
                           double beta);
MatchingLoss matching_loss(const torch::Tensor& speech, const torch::Tensor& image,
                           const torch::Tensor& class_ids, int num_classes, double beta);

// -sum_i [log softmax(speech_logits_i)[C_i] + log softmax(image_logits_i)[C_i]]
torch::Tensor distinctive_loss(const torch::Tensor& speech_logits, const torch::Tensor& image_logits,
                               const torch::Tensor& class_ids);

struct SenLoss {
  MatchingLoss matching;
  torch::Tensor distinctive;
  torch::Tensor total;  // matching.total + distinctive
};

SenLoss sen_total_loss(const torch::Tensor& speech, const torch::Tensor& image,
                       const torch::Tensor& speech_logits, const torch::Tensor& image_logits,
                       const torch::Tensor& class_ids, int num_classes, double beta);

// ---- training ------------------------------------------------------------

struct SenSchedule {
  int epochs = 30;
  int64_t batch_size = 32;
  double learning_rate = 2e-4;
  std::uint64_t seed = 7;
  bool augment = true;
};

struct SenHistoryRow {
  int64_t step = 0;
  double matching = 0.0;
  double distinctive = 0.0;
  double total = 0.0;
};

void write_sen_history(const std::filesystem::path& path, std::span<const SenHistoryRow> rows);
std::vector<SenHistoryRow> read_sen_history(const std::filesystem::path& path);

// Builds the image backbone described by the options.
std::shared_ptr<ImageFeatureExtractor> make_image_backbone(const SenOptions& options);

class SenTrainer {
 public:
  SenTrainer(const Corpus& corpus, SenOptions options, SenSchedule schedule);

  // One pass over the shuffled train split; returns the rows it appended.
  std::span<const SenHistoryRow> run_epoch();
  void train_to(int epochs);

  int epoch() const { return epoch_; }
  int64_t step() const { return step_; }
  const std::vector<SenHistoryRow>& history() const { return history_; }
  SpeechEmbeddingNetwork network() const { return network_; }

  // extra metadata (config echo, lineage) is merged into the checkpoint.
  void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
  // Restores weights, optimizer, sampler state and counters. History rows
  // after the checkpoint's step are dropped.
  void resume(const std::filesystem::path& path);

 private:
  const Corpus& corpus_;
  SenOptions options_;
  SenSchedule schedule_;
  SpeechEmbeddingNetwork network_{nullptr};
  std::unique_ptr<torch::optim::Adam> optimizer_;
  Rng rng_;
  int epoch_ = 0;
  int64_t step_ = 0;
  std::vector<SenHistoryRow> history_;
};

struct LoadedSen {
  SpeechEmbeddingNetwork network{nullptr};
  nlohmann::json metadata;
  std::string file_hash;
};

LoadedSen load_sen(const std::filesystem::path& path);

// Inference-mode speech embeddings for the given records, [n, embed_dim].
torch::Tensor embed_speech(SpeechEmbeddingNetwork& network, const Corpus& corpus,
                           std::span<const std::size_t> records);
torch::Tensor embed_images(SpeechEmbeddingNetwork& network, const Corpus& corpus,
                           std::span<const std::size_t> records);

// Fraction of records whose nearest image (cosine) among `records` has the
// same class as the query utterance.
double speech_to_image_recall_at_1(SpeechEmbeddingNetwork& network, const Corpus& corpus,
                                   std::span<const std::size_t> records);

}  // namespace s2ig
