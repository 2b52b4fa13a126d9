#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "s2ig/corpus.hpp"
#include "s2ig/json.hpp"
#include "s2ig/rng.hpp"
#include "s2ig/sen.hpp"

namespace s2ig {

inline constexpr double kProbabilityEpsilon = 1e-7;

// Relation labels of the supervisor.
enum RelationLabel : int64_t {
  kRelationPositive = 0,   // ground truth vs. same-class real image
  kRelationNegative = 1,   // ground truth vs. mismatched real image
  kRelationUndesired = 2,  // ground truth vs. itself
};

struct AblationFlags {
  bool dense_stacking = true;
  bool relation_supervisor = true;
  bool use_sen_embeddings = true;

  // "full", or the disabled components joined by '+', e.g. "no-rs".
  std::string label() const;
  bool operator==(const AblationFlags&) const = default;
};

void to_json(nlohmann::json& j, const AblationFlags& f);
void from_json(const nlohmann::json& j, AblationFlags& f);

// Parses "no-rs", "no-dense" or "no-sen" (and "full") into the flag set.
AblationFlags apply_ablation(AblationFlags flags, const std::string& name);

struct RdgOptions {
  int64_t condition_dim = 1024;  // SEN embedding size, or num_mel without SEN
  int64_t ca_dim = 128;
  int64_t z_dim = 100;
  int64_t gf_dim = 32;           // channels of every hidden feature h_i
  int64_t df_dim = 32;
  int64_t rs_channels = 16;
  int64_t residual_blocks = 1;
  std::vector<int64_t> scales{64, 128, 256};
  double kl_weight = 1.0;
  AblationFlags flags;

  // Scales must be powers of two, start at >= 8 and double at every stage
  // (at most three stages).
  void validate() const;
  int64_t final_scale() const { return scales.back(); }
  int64_t relation_dim() const { return 2 * 4 * rs_channels; }
};

void to_json(nlohmann::json& j, const RdgOptions& o);
void from_json(const nlohmann::json& j, RdgOptions& o);

// ---- conditioning augmentation --------------------------------------------

struct ConditioningCode {
  torch::Tensor mu;
  torch::Tensor logvar;
  torch::Tensor c;
  torch::Tensor kl;  // batch mean of 0.5 * sum(mu^2 + sigma^2 - log sigma^2 - 1)
};

// 0.5 * sum(mu^2 + exp(logvar) - logvar - 1) over the last dim, averaged over
// the batch.
torch::Tensor kl_divergence(const torch::Tensor& mu, const torch::Tensor& logvar);

class ConditioningAugmentationImpl : public torch::nn::Module {
 public:
  ConditioningAugmentationImpl(int64_t condition_dim, int64_t ca_dim);

  // sample=true draws c = mu + sigma * eps with eps from `generator`;
  // sample=false returns c = mu.
  ConditioningCode forward(const torch::Tensor& condition, bool sample,
                           std::optional<at::Generator> generator = std::nullopt);

 private:
  int64_t condition_dim_;
  int64_t ca_dim_;
  torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(ConditioningAugmentation);

// ---- generator -------------------------------------------------------------

struct ImagePyramid {
  std::vector<torch::Tensor> hiddens;  // h_i [B, gf, s_i, s_i]
  std::vector<torch::Tensor> images;   // I_i [B, 3, s_i, s_i] in [-1, 1]
};

// Nearest-neighbour x2 upsampling, 3x3 conv, batch norm and GLU.
class UpBlockImpl : public torch::nn::Module {
 public:
  UpBlockImpl(int64_t in_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::BatchNorm2d bn_{nullptr};
};
TORCH_MODULE(UpBlock);

class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr};
  torch::nn::Conv2d conv2_{nullptr};
  torch::nn::BatchNorm2d bn2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

// h_0 = F_0(z, c); h_i = F_i(h_0, ..., h_{i-1}, c) with dense stacking, or
// F_i(h_{i-1}, c) without; I_i = G_i(h_i).
class DenseGeneratorImpl : public torch::nn::Module {
 public:
  explicit DenseGeneratorImpl(const RdgOptions& options);

  ImagePyramid forward(const torch::Tensor& c, const torch::Tensor& z);

  // Runs F_i on explicit hidden features (all of h_0..h_{i-1}); i >= 1.
  // Without dense stacking only hiddens[i-1] is read.
  torch::Tensor stage(std::size_t i, std::span<const torch::Tensor> hiddens, const torch::Tensor& c);
  torch::Tensor to_image(std::size_t i, const torch::Tensor& hidden);

  std::size_t num_stages() const { return scales_.size(); }

 private:
  torch::Tensor initial(const torch::Tensor& c, const torch::Tensor& z);

  std::vector<int64_t> scales_;
  int64_t gf_dim_;
  int64_t ca_dim_;
  int64_t z_dim_;
  bool dense_;
  torch::nn::Linear fc_{nullptr};
  torch::nn::BatchNorm1d fc_bn_{nullptr};
  torch::nn::ModuleList initial_ups_{nullptr};
  std::vector<torch::nn::Conv2d> joint_convs_;
  std::vector<torch::nn::BatchNorm2d> joint_bns_;
  std::vector<torch::nn::Sequential> residuals_;
  std::vector<UpBlock> stage_ups_;
  std::vector<torch::nn::Conv2d> to_rgb_;
};
TORCH_MODULE(DenseGenerator);

// ---- discriminators --------------------------------------------------------

struct DiscriminatorOutput {
  torch::Tensor unconditional;  // D(I) in (0, 1), [B]
  torch::Tensor conditional;    // D(I, c) in (0, 1), [B]
};

// Stride-2 convolutions down to 4x4, then an unconditional head and a head on
// the feature map concatenated with the spatially replicated condition.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  DiscriminatorImpl(int64_t image_size, int64_t df_dim, int64_t ca_dim);

  DiscriminatorOutput forward(const torch::Tensor& images, const torch::Tensor& c);
  int64_t image_size() const { return image_size_; }

 private:
  int64_t image_size_;
  int64_t ca_dim_;
  torch::nn::Sequential encoder_{nullptr};
  torch::nn::Conv2d uncond_head_{nullptr};
  torch::nn::Conv2d joint_{nullptr};
  torch::nn::Conv2d cond_head_{nullptr};
};
TORCH_MODULE(Discriminator);

// ---- relation supervisor ---------------------------------------------------

// Shared convolutional encoder f; R(a, b) = [f(a) - f(b), f(a) * f(b)];
// a linear layer maps R to logits over the three relation labels.
class RelationSupervisorImpl : public torch::nn::Module {
 public:
  RelationSupervisorImpl(int64_t image_size, int64_t channels);

  torch::Tensor features(const torch::Tensor& images);  // shared encoder f
  torch::Tensor classify(const torch::Tensor& anchor_features, const torch::Tensor& other_features);
  torch::Tensor relation_vector(const torch::Tensor& anchor, const torch::Tensor& other);
  torch::Tensor forward(const torch::Tensor& anchor, const torch::Tensor& other);  // logits [B, 3]
  int64_t relation_dim() const { return 2 * encoder_->feature_dim(); }
  int64_t image_size() const { return image_size_; }

 private:
  int64_t image_size_;
  std::shared_ptr<ConvFeatureExtractor> encoder_;
  torch::nn::Linear classifier_{nullptr};
};
TORCH_MODULE(RelationSupervisor);

// ---- objectives ------------------------------------------------------------

// log(clamp(p, eps, 1 - eps)); adds the number of clamped entries to
// *saturated when given.
torch::Tensor clamped_log(const torch::Tensor& p, int64_t* saturated = nullptr);

// Batch mean of -log D(real) - log(1 - D(fake)) - log D(real, c) - log(1 - D(fake, c)).
torch::Tensor discriminator_loss(const DiscriminatorOutput& real, const DiscriminatorOutput& fake,
                                 int64_t* saturated = nullptr);

// Batch mean of -log D(fake) - log D(fake, c).
torch::Tensor generator_adversarial_loss(const DiscriminatorOutput& fake, int64_t* saturated = nullptr);

struct RelationLogits {
  torch::Tensor positive;   // RS(GT, RI)
  torch::Tensor negative;   // RS(GT, MI)
  torch::Tensor undesired;  // RS(GT, GT)
  torch::Tensor fake;       // RS(GT, I); empty in the discriminator phase
};

struct RelationLoss {
  torch::Tensor real;   // the three real-pair terms
  torch::Tensor fake;   // the fake-pair term targeting the positive label
  torch::Tensor total;  // real + fake
};

// Each term is a batch-mean cross entropy.
RelationLoss relation_loss(const RelationLogits& logits);

RelationLogits relation_logits(RelationSupervisor& rs, const torch::Tensor& ground_truth,
                               const torch::Tensor& same_class, const torch::Tensor& mismatched,
                               const torch::Tensor& fake = {});

struct GeneratorLoss {
  torch::Tensor adversarial;  // sum over scales
  torch::Tensor relation;     // zero when the supervisor is disabled
  torch::Tensor kl;
  torch::Tensor total;        // adversarial + relation + kl_weight * kl
};

GeneratorLoss generator_loss(std::span<const DiscriminatorOutput> fake_outputs,
                             const std::optional<RelationLoss>& relation, const torch::Tensor& kl,
                             double kl_weight, int64_t* saturated = nullptr);

// ---- model bundle ----------------------------------------------------------

struct RdgNetworks {
  RdgOptions options;
  ConditioningAugmentation ca{nullptr};
  DenseGenerator generator{nullptr};
  std::vector<Discriminator> discriminators;
  RelationSupervisor relation{nullptr};  // null when the supervisor is disabled

  explicit RdgNetworks(RdgOptions opts);

  std::vector<torch::Tensor> generator_parameters() const;      // G + CA
  std::vector<torch::Tensor> discriminator_parameters() const;  // D_i + RS
  void train(bool on);

  // Inference: c = mu, eval-mode normalisation.
  ImagePyramid generate(const torch::Tensor& condition, const torch::Tensor& z);
};

// ---- conditions ------------------------------------------------------------

// Maps utterances to the vectors the generator is conditioned on: frozen SEN
// speech embeddings, or (ablation) log-Mel frames mean-pooled over each
// utterance's true length.
class ConditionEncoder {
 public:
  static ConditionEncoder from_sen(const std::filesystem::path& sen_checkpoint);
  static ConditionEncoder mean_spectrogram(int64_t num_mel);
  // Rebuilds the encoder recorded in an RDG checkpoint's "condition" block.
  static ConditionEncoder from_source(const nlohmann::json& source);

  torch::Tensor encode(std::span<const Spectrogram* const> spectrograms);
  torch::Tensor encode_corpus(const Corpus& corpus);

  int64_t dim() const { return dim_; }
  const nlohmann::json& source() const { return source_; }

 private:
  ConditionEncoder() = default;

  std::shared_ptr<SpeechEmbeddingNetworkImpl> sen_;
  float log_floor_ = 1e-10f;
  int64_t dim_ = 0;
  nlohmann::json source_;
};

// Per-record conditioning vectors [corpus.size(), dim] plus their lineage.
struct ConditionTable {
  torch::Tensor vectors;
  nlohmann::json source;
};

ConditionTable condition_table(const Corpus& corpus, ConditionEncoder& encoder);

// ---- training ------------------------------------------------------------

struct RdgSchedule {
  int epochs = 50;
  int64_t batch_size = 16;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::uint64_t seed = 7;
};

struct RdgHistoryRow {
  int64_t step = 0;
  double generator = 0.0;
  std::array<double, 3> discriminator{0.0, 0.0, 0.0};
  double relation = 0.0;
  double kl = 0.0;
  int64_t saturation = 0;
};

void write_rdg_history(const std::filesystem::path& path, std::span<const RdgHistoryRow> rows);
std::vector<RdgHistoryRow> read_rdg_history(const std::filesystem::path& path);

// Real images of the given records at an arbitrary pyramid scale.
torch::Tensor real_images(const Corpus& corpus, std::span<const std::size_t> idx, int64_t scale);

class RdgTrainer {
 public:
  RdgTrainer(const Corpus& corpus, ConditionTable conditions, RdgOptions options, RdgSchedule schedule);

  // One D step and one G step per batch over the shuffled train split.
  std::span<const RdgHistoryRow> run_epoch();
  void train_to(int epochs);

  int epoch() const { return epoch_; }
  int64_t step() const { return step_; }
  const std::vector<RdgHistoryRow>& history() const { return history_; }
  RdgNetworks& networks() { return networks_; }
  const RdgOptions& options() const { return networks_.options; }

  // Final-scale images for the given records, `per_record` noise draws each,
  // from a generator seeded by `seed` (independent of the training stream).
  torch::Tensor sample(std::span<const std::size_t> records, int per_record, std::uint64_t seed);
  // Grid of the first train records at the final scale, fixed noise.
  void write_sample_grid(const std::filesystem::path& path);

  void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
  void resume(const std::filesystem::path& path);

 private:
  const Corpus& corpus_;
  ConditionTable conditions_;
  RdgSchedule schedule_;
  RdgNetworks networks_;
  std::unique_ptr<torch::optim::Adam> g_optimizer_;
  std::unique_ptr<torch::optim::Adam> d_optimizer_;
  Rng rng_;
  at::Generator noise_;
  RelationSampler relations_;
  int epoch_ = 0;
  int64_t step_ = 0;
  std::vector<RdgHistoryRow> history_;
};

struct LoadedRdg {
  std::unique_ptr<RdgNetworks> networks;
  nlohmann::json metadata;
  std::string file_hash;
};

LoadedRdg load_rdg(const std::filesystem::path& path);

// Standard normal [n, dim] from a dedicated generator.
torch::Tensor noise(int64_t n, int64_t dim, at::Generator& generator);
at::Generator make_generator(std::uint64_t seed);

}  // namespace s2ig
