#include "s2ig/rdg.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "s2ig/checkpoint.hpp"
#include "s2ig/error.hpp"
#include "s2ig/hash.hpp"
#include "s2ig/image_io.hpp"

namespace s2ig {
namespace fs = std::filesystem;
namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

constexpr double kLeakySlope = 0.2;

torch::Tensor leaky(const torch::Tensor& x) { return torch::leaky_relu(x, kLeakySlope); }

torch::Tensor upsample_to(const torch::Tensor& x, int64_t size) {
  if (x.size(-1) == size) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{size, size})
                               .mode(torch::kNearest));
}

torch::Tensor replicate(const torch::Tensor& c, int64_t size) {
  return c.view({c.size(0), c.size(1), 1, 1}).expand({c.size(0), c.size(1), size, size});
}

nn::Conv2d conv3x3(int64_t in, int64_t out, bool bias = true) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1).bias(bias));
}

bool is_power_of_two(int64_t v) { return v > 0 && std::has_single_bit(static_cast<uint64_t>(v)); }

int64_t log2_of(int64_t v) { return static_cast<int64_t>(std::bit_width(static_cast<uint64_t>(v))) - 1; }

torch::Tensor index_tensor(std::span<const std::size_t> idx) {
  std::vector<int64_t> v(idx.begin(), idx.end());
  return torch::tensor(v, torch::kInt64);
}

std::string shape_of(const torch::Tensor& t) {
  std::ostringstream s;
  s << t.sizes();
  return s.str();
}

}  // namespace

// ---- flags and options ----------------------------------------------------

std::string AblationFlags::label() const {
  std::string out;
  auto add = [&](const char* name) { out += (out.empty() ? "" : "+") + std::string(name); };
  if (!dense_stacking) add("no-dense");
  if (!relation_supervisor) add("no-rs");
  if (!use_sen_embeddings) add("no-sen");
  return out.empty() ? "full" : out;
}

void to_json(nlohmann::json& j, const AblationFlags& f) {
  j = nlohmann::json{{"dense_stacking", f.dense_stacking},
                     {"relation_supervisor", f.relation_supervisor},
                     {"use_sen_embeddings", f.use_sen_embeddings}};
}

void from_json(const nlohmann::json& j, AblationFlags& f) {
  j.at("dense_stacking").get_to(f.dense_stacking);
  j.at("relation_supervisor").get_to(f.relation_supervisor);
  j.at("use_sen_embeddings").get_to(f.use_sen_embeddings);
}

AblationFlags apply_ablation(AblationFlags flags, const std::string& name) {
  if (name == "full") return flags;
  if (name == "no-dense") {
    flags.dense_stacking = false;
  } else if (name == "no-rs") {
    flags.relation_supervisor = false;
  } else if (name == "no-sen") {
    flags.use_sen_embeddings = false;
  } else {
    throw ValidationError("unknown ablation '" + name + "' (expected no-dense, no-rs or no-sen)");
  }
  return flags;
}

void RdgOptions::validate() const {
  if (scales.empty() || scales.size() > 3) throw ValidationError("rdg: between one and three scales are required");
  if (!is_power_of_two(scales[0]) || scales[0] < 8) {
    throw ValidationError("rdg: the first scale must be a power of two >= 8");
  }
  for (std::size_t i = 1; i < scales.size(); ++i) {
    if (scales[i] != 2 * scales[i - 1]) throw ValidationError("rdg: each scale must double the previous one");
  }
  if (condition_dim < 1 || ca_dim < 1 || z_dim < 1 || gf_dim < 1 || df_dim < 1 || rs_channels < 1) {
    throw ValidationError("rdg: all dimensions must be positive");
  }
  if (residual_blocks < 0) throw ValidationError("rdg: residual_blocks must be >= 0");
  if (kl_weight < 0.0) throw ValidationError("rdg: kl_weight must be >= 0");
}

void to_json(nlohmann::json& j, const RdgOptions& o) {
  j = nlohmann::json{{"condition_dim", o.condition_dim}, {"ca_dim", o.ca_dim},
                     {"z_dim", o.z_dim},                 {"gf_dim", o.gf_dim},
                     {"df_dim", o.df_dim},               {"rs_channels", o.rs_channels},
                     {"residual_blocks", o.residual_blocks}, {"scales", o.scales},
                     {"kl_weight", o.kl_weight},         {"flags", o.flags}};
}

void from_json(const nlohmann::json& j, RdgOptions& o) {
  j.at("condition_dim").get_to(o.condition_dim);
  j.at("ca_dim").get_to(o.ca_dim);
  j.at("z_dim").get_to(o.z_dim);
  j.at("gf_dim").get_to(o.gf_dim);
  j.at("df_dim").get_to(o.df_dim);
  j.at("rs_channels").get_to(o.rs_channels);
  j.at("residual_blocks").get_to(o.residual_blocks);
  j.at("scales").get_to(o.scales);
  j.at("kl_weight").get_to(o.kl_weight);
  j.at("flags").get_to(o.flags);
}

// ---- conditioning augmentation --------------------------------------------

torch::Tensor kl_divergence(const torch::Tensor& mu, const torch::Tensor& logvar) {
  const auto per_item = 0.5 * (mu.pow(2) + logvar.exp() - logvar - 1.0).sum(-1);
  return per_item.dim() == 0 ? per_item : per_item.mean();
}

ConditioningAugmentationImpl::ConditioningAugmentationImpl(int64_t condition_dim, int64_t ca_dim)
    : condition_dim_(condition_dim), ca_dim_(ca_dim) {
  fc_ = register_module("fc", nn::Linear(condition_dim, 2 * ca_dim));
}

ConditioningCode ConditioningAugmentationImpl::forward(const torch::Tensor& condition, bool sample,
                                                       std::optional<at::Generator> generator) {
  if (condition.dim() != 2 || condition.size(1) != condition_dim_) {
    throw CompatibilityError("conditioning augmentation expects [B, " + std::to_string(condition_dim_) +
                             "] conditions, got " + shape_of(condition));
  }
  const auto stats = leaky(fc_->forward(condition));
  ConditioningCode code;
  code.mu = stats.narrow(1, 0, ca_dim_);
  code.logvar = stats.narrow(1, ca_dim_, ca_dim_);
  code.kl = kl_divergence(code.mu, code.logvar);
  if (sample) {
    const auto eps = torch::randn(code.mu.sizes(), generator, code.mu.options());
    code.c = code.mu + (0.5 * code.logvar).exp() * eps;
  } else {
    code.c = code.mu;
  }
  return code;
}

// ---- generator -------------------------------------------------------------

UpBlockImpl::UpBlockImpl(int64_t in_channels, int64_t out_channels) {
  conv_ = register_module("conv", conv3x3(in_channels, 2 * out_channels, false));
  bn_ = register_module("bn", nn::BatchNorm2d(2 * out_channels));
}

torch::Tensor UpBlockImpl::forward(const torch::Tensor& x) {
  const auto up = upsample_to(x, 2 * x.size(-1));
  return F::glu(bn_->forward(conv_->forward(up)), F::GLUFuncOptions(1));
}

ResidualBlockImpl::ResidualBlockImpl(int64_t channels) {
  conv1_ = register_module("conv1", conv3x3(channels, 2 * channels, false));
  bn1_ = register_module("bn1", nn::BatchNorm2d(2 * channels));
  conv2_ = register_module("conv2", conv3x3(channels, channels, false));
  bn2_ = register_module("bn2", nn::BatchNorm2d(channels));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto y = F::glu(bn1_->forward(conv1_->forward(x)), F::GLUFuncOptions(1));
  return x + bn2_->forward(conv2_->forward(y));
}

DenseGeneratorImpl::DenseGeneratorImpl(const RdgOptions& options)
    : scales_(options.scales),
      gf_dim_(options.gf_dim),
      ca_dim_(options.ca_dim),
      z_dim_(options.z_dim),
      dense_(options.flags.dense_stacking) {
  options.validate();
  const int64_t base = 4 * gf_dim_;
  fc_ = register_module("fc", nn::Linear(nn::LinearOptions(ca_dim_ + z_dim_, 2 * base * 16).bias(false)));
  fc_bn_ = register_module("fc_bn", nn::BatchNorm1d(2 * base * 16));
  initial_ups_ = register_module("initial_ups", nn::ModuleList());
  const int64_t ups = log2_of(scales_[0] / 4);
  int64_t channels = base;
  for (int64_t k = 0; k < ups; ++k) {
    const int64_t out = (k + 1 == ups) ? gf_dim_ : std::max(gf_dim_, channels / 2);
    initial_ups_->push_back(UpBlock(channels, out));
    channels = out;
  }

  to_rgb_.push_back(register_module("to_rgb0", conv3x3(gf_dim_, 3)));
  for (std::size_t i = 1; i < scales_.size(); ++i) {
    const int64_t inputs = gf_dim_ * (dense_ ? static_cast<int64_t>(i) : 1) + ca_dim_;
    const auto tag = std::to_string(i);
    joint_convs_.push_back(register_module("joint" + tag, conv3x3(inputs, 2 * gf_dim_, false)));
    joint_bns_.push_back(register_module("joint_bn" + tag, nn::BatchNorm2d(2 * gf_dim_)));
    nn::Sequential blocks;
    for (int64_t r = 0; r < options.residual_blocks; ++r) blocks->push_back(ResidualBlock(gf_dim_));
    residuals_.push_back(register_module("residual" + tag, blocks));
    stage_ups_.push_back(register_module("up" + tag, UpBlock(gf_dim_, gf_dim_)));
    to_rgb_.push_back(register_module("to_rgb" + tag, conv3x3(gf_dim_, 3)));
  }
}

torch::Tensor DenseGeneratorImpl::initial(const torch::Tensor& c, const torch::Tensor& z) {
  if (c.dim() != 2 || c.size(1) != ca_dim_) {
    throw CompatibilityError("generator expects a [B, " + std::to_string(ca_dim_) + "] condition code, got " +
                             shape_of(c));
  }
  if (z.dim() != 2 || z.size(1) != z_dim_ || z.size(0) != c.size(0)) {
    throw CompatibilityError("generator expects [B, " + std::to_string(z_dim_) + "] noise, got " + shape_of(z));
  }
  auto x = F::glu(fc_bn_->forward(fc_->forward(torch::cat({c, z}, 1))), F::GLUFuncOptions(1));
  x = x.view({x.size(0), 4 * gf_dim_, 4, 4});
  for (const auto& up : *initial_ups_) x = up->as<UpBlock>()->forward(x);
  return x;
}

torch::Tensor DenseGeneratorImpl::stage(std::size_t i, std::span<const torch::Tensor> hiddens,
                                        const torch::Tensor& c) {
  if (i == 0 || i >= scales_.size() || hiddens.size() < i) {
    throw ValidationError("generator stage " + std::to_string(i) + " needs h_0..h_" + std::to_string(i - 1));
  }
  const int64_t size = scales_[i - 1];
  std::vector<torch::Tensor> inputs;
  if (dense_) {
    for (std::size_t j = 0; j < i; ++j) inputs.push_back(upsample_to(hiddens[j], size));
  } else {
    inputs.push_back(hiddens[i - 1]);
  }
  inputs.push_back(replicate(c, size));
  auto x = torch::cat(inputs, 1);
  x = F::glu(joint_bns_[i - 1]->forward(joint_convs_[i - 1]->forward(x)), F::GLUFuncOptions(1));
  x = residuals_[i - 1]->forward(x);
  return stage_ups_[i - 1]->forward(x);
}

torch::Tensor DenseGeneratorImpl::to_image(std::size_t i, const torch::Tensor& hidden) {
  return torch::tanh(to_rgb_.at(i)->forward(hidden));
}

ImagePyramid DenseGeneratorImpl::forward(const torch::Tensor& c, const torch::Tensor& z) {
  ImagePyramid out;
  out.hiddens.push_back(initial(c, z));
  for (std::size_t i = 1; i < scales_.size(); ++i) out.hiddens.push_back(stage(i, out.hiddens, c));
  for (std::size_t i = 0; i < scales_.size(); ++i) out.images.push_back(to_image(i, out.hiddens[i]));
  return out;
}

// ---- discriminator ---------------------------------------------------------

DiscriminatorImpl::DiscriminatorImpl(int64_t image_size, int64_t df_dim, int64_t ca_dim)
    : image_size_(image_size), ca_dim_(ca_dim) {
  if (!is_power_of_two(image_size) || image_size < 8) {
    throw ValidationError("discriminator input size must be a power of two >= 8");
  }
  nn::Sequential encoder;
  const int64_t downs = log2_of(image_size / 4);
  int64_t channels = 3;
  for (int64_t k = 0; k < downs; ++k) {
    const int64_t out = k == 0 ? df_dim : std::min(2 * channels, 8 * df_dim);
    encoder->push_back(nn::Conv2d(nn::Conv2dOptions(channels, out, 4).stride(2).padding(1)));
    encoder->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(kLeakySlope)));
    channels = out;
  }
  encoder_ = register_module("encoder", encoder);
  uncond_head_ = register_module("uncond_head", nn::Conv2d(nn::Conv2dOptions(channels, 1, 4)));
  joint_ = register_module("joint", conv3x3(channels + ca_dim, channels));
  cond_head_ = register_module("cond_head", nn::Conv2d(nn::Conv2dOptions(channels, 1, 4)));
}

DiscriminatorOutput DiscriminatorImpl::forward(const torch::Tensor& images, const torch::Tensor& c) {
  if (images.dim() != 4 || images.size(2) != image_size_ || images.size(3) != image_size_) {
    throw ValidationError("discriminator for " + std::to_string(image_size_) + " px got " + shape_of(images));
  }
  const auto features = encoder_->forward(images);
  DiscriminatorOutput out;
  out.unconditional = torch::sigmoid(uncond_head_->forward(features)).flatten();
  const auto joint = leaky(joint_->forward(torch::cat({features, replicate(c, features.size(-1))}, 1)));
  out.conditional = torch::sigmoid(cond_head_->forward(joint)).flatten();
  return out;
}

// ---- relation supervisor ---------------------------------------------------

RelationSupervisorImpl::RelationSupervisorImpl(int64_t image_size, int64_t channels) : image_size_(image_size) {
  ConvFeatureExtractorOptions opts;
  opts.working_size = std::min<int64_t>(32, image_size);
  opts.channels = channels;
  encoder_ = register_module("encoder", std::make_shared<ConvFeatureExtractor>(opts));
  classifier_ = register_module("classifier", nn::Linear(2 * encoder_->feature_dim(), 3));
}

torch::Tensor RelationSupervisorImpl::features(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(2) != image_size_ || images.size(3) != image_size_) {
    throw ValidationError("relation supervisor expects " + std::to_string(image_size_) + " px images, got " +
                          shape_of(images));
  }
  return encoder_->forward(images);
}

torch::Tensor RelationSupervisorImpl::classify(const torch::Tensor& anchor_features,
                                               const torch::Tensor& other_features) {
  return classifier_->forward(
      torch::cat({anchor_features - other_features, anchor_features * other_features}, 1));
}

torch::Tensor RelationSupervisorImpl::relation_vector(const torch::Tensor& anchor, const torch::Tensor& other) {
  const auto fa = features(anchor);
  const auto fb = features(other);
  return torch::cat({fa - fb, fa * fb}, 1);
}

torch::Tensor RelationSupervisorImpl::forward(const torch::Tensor& anchor, const torch::Tensor& other) {
  return classify(features(anchor), features(other));
}

// ---- objectives ------------------------------------------------------------

namespace {

torch::Tensor clamp_probability(const torch::Tensor& p, int64_t* saturated) {
  if (saturated != nullptr) {
    *saturated += ((p < kProbabilityEpsilon) | (p > 1.0 - kProbabilityEpsilon)).sum().item<int64_t>();
  }
  return p.clamp(kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
}

}  // namespace

torch::Tensor clamped_log(const torch::Tensor& p, int64_t* saturated) {
  return clamp_probability(p, saturated).log();
}

torch::Tensor discriminator_loss(const DiscriminatorOutput& real, const DiscriminatorOutput& fake,
                                 int64_t* saturated) {
  const auto real_u = clamp_probability(real.unconditional, saturated);
  const auto fake_u = clamp_probability(fake.unconditional, saturated);
  const auto real_c = clamp_probability(real.conditional, saturated);
  const auto fake_c = clamp_probability(fake.conditional, saturated);
  const auto per_item = -(real_u.log() + (1.0 - fake_u).log() + real_c.log() + (1.0 - fake_c).log());
  return per_item.mean();
}

torch::Tensor generator_adversarial_loss(const DiscriminatorOutput& fake, int64_t* saturated) {
  const auto per_item = -(clamped_log(fake.unconditional, saturated) + clamped_log(fake.conditional, saturated));
  return per_item.mean();
}

namespace {

torch::Tensor relation_term(const torch::Tensor& logits, RelationLabel label) {
  const auto target = torch::full({logits.size(0)}, static_cast<int64_t>(label), torch::kInt64);
  return F::cross_entropy(logits, target);
}

}  // namespace

RelationLoss relation_loss(const RelationLogits& logits) {
  RelationLoss out;
  out.real = relation_term(logits.positive, kRelationPositive) +
             relation_term(logits.negative, kRelationNegative) +
             relation_term(logits.undesired, kRelationUndesired);
  out.fake = logits.fake.defined() ? relation_term(logits.fake, kRelationPositive)
                                   : torch::zeros({}, logits.positive.options());
  out.total = out.real + out.fake;
  return out;
}

RelationLogits relation_logits(RelationSupervisor& rs, const torch::Tensor& ground_truth,
                               const torch::Tensor& same_class, const torch::Tensor& mismatched,
                               const torch::Tensor& fake) {
  // Each image is encoded once and shared by the pairs it takes part in.
  const auto gt = rs->features(ground_truth);
  RelationLogits out;
  out.positive = rs->classify(gt, rs->features(same_class));
  out.negative = rs->classify(gt, rs->features(mismatched));
  out.undesired = rs->classify(gt, gt);
  if (fake.defined()) out.fake = rs->classify(gt, rs->features(fake));
  return out;
}

GeneratorLoss generator_loss(std::span<const DiscriminatorOutput> fake_outputs,
                             const std::optional<RelationLoss>& relation, const torch::Tensor& kl,
                             double kl_weight, int64_t* saturated) {
  if (fake_outputs.empty()) throw ValidationError("generator_loss: no discriminator outputs");
  GeneratorLoss out;
  out.adversarial = generator_adversarial_loss(fake_outputs[0], saturated);
  for (std::size_t i = 1; i < fake_outputs.size(); ++i) {
    out.adversarial = out.adversarial + generator_adversarial_loss(fake_outputs[i], saturated);
  }
  out.relation = relation ? relation->total : torch::zeros({}, out.adversarial.options());
  out.kl = kl.defined() ? kl : torch::zeros({}, out.adversarial.options());
  out.total = out.adversarial + out.relation;
  if (kl_weight != 0.0) out.total = out.total + kl_weight * out.kl;
  return out;
}

// ---- model bundle ----------------------------------------------------------

RdgNetworks::RdgNetworks(RdgOptions opts) : options(std::move(opts)) {
  options.validate();
  ca = ConditioningAugmentation(options.condition_dim, options.ca_dim);
  generator = DenseGenerator(options);
  for (int64_t s : options.scales) discriminators.emplace_back(s, options.df_dim, options.ca_dim);
  if (options.flags.relation_supervisor) relation = RelationSupervisor(options.final_scale(), options.rs_channels);
}

std::vector<torch::Tensor> RdgNetworks::generator_parameters() const {
  auto params = generator->parameters();
  for (const auto& p : ca->parameters()) params.push_back(p);
  return params;
}

std::vector<torch::Tensor> RdgNetworks::discriminator_parameters() const {
  std::vector<torch::Tensor> params;
  for (const auto& d : discriminators) {
    for (const auto& p : d->parameters()) params.push_back(p);
  }
  if (relation) {
    for (const auto& p : relation->parameters()) params.push_back(p);
  }
  return params;
}

void RdgNetworks::train(bool on) {
  ca->train(on);
  generator->train(on);
  for (auto& d : discriminators) d->train(on);
  if (relation) relation->train(on);
}

ImagePyramid RdgNetworks::generate(const torch::Tensor& condition, const torch::Tensor& z) {
  torch::NoGradGuard no_grad;
  ca->eval();
  generator->eval();
  const auto code = ca->forward(condition, /*sample=*/false);
  return generator->forward(code.c, z);
}

// ---- conditions ------------------------------------------------------------

ConditionEncoder ConditionEncoder::from_sen(const fs::path& sen_checkpoint) {
  auto loaded = load_sen(sen_checkpoint);
  ConditionEncoder enc;
  enc.sen_ = loaded.network.ptr();
  enc.dim_ = loaded.network->options().embed_dim;
  enc.log_floor_ = static_cast<float>(loaded.metadata.at("frontend").value("log_floor", 1e-10));
  enc.source_ = {{"kind", "sen"},
                 {"checkpoint", fs::absolute(sen_checkpoint).string()},
                 {"sha256", loaded.file_hash},
                 {"embed_dim", enc.dim_},
                 {"num_mel", loaded.network->options().speech.num_mel}};
  return enc;
}

ConditionEncoder ConditionEncoder::mean_spectrogram(int64_t num_mel) {
  if (num_mel < 1) throw ValidationError("num_mel must be positive");
  ConditionEncoder enc;
  enc.dim_ = num_mel;
  enc.source_ = {{"kind", "mean-spectrogram"}, {"num_mel", num_mel}};
  return enc;
}

ConditionEncoder ConditionEncoder::from_source(const nlohmann::json& source) {
  const auto kind = source.at("kind").get<std::string>();
  if (kind == "mean-spectrogram") return mean_spectrogram(source.at("num_mel").get<int64_t>());
  if (kind != "sen") throw CompatibilityError("unknown condition source '" + kind + "'");
  const fs::path path = source.at("checkpoint").get<std::string>();
  auto enc = from_sen(path);
  if (enc.source_.at("sha256") != source.at("sha256")) {
    throw CompatibilityError("SEN checkpoint " + path.string() + " changed since the RDG model was trained (sha256 " +
                             enc.source_.at("sha256").get<std::string>() + " vs recorded " +
                             source.at("sha256").get<std::string>() + ")");
  }
  return enc;
}

torch::Tensor ConditionEncoder::encode(std::span<const Spectrogram* const> spectrograms) {
  if (spectrograms.empty()) return torch::zeros({0, dim_});
  torch::NoGradGuard no_grad;
  if (!sen_) {
    std::vector<torch::Tensor> rows;
    rows.reserve(spectrograms.size());
    for (const auto* s : spectrograms) {
      if (s->num_mel() != dim_) {
        throw CompatibilityError("spectrogram has " + std::to_string(s->num_mel()) + " Mel bands, condition expects " +
                                 std::to_string(dim_));
      }
      rows.push_back(s->frames.mean(0));
    }
    return torch::stack(rows);
  }
  const int64_t expected_mel = sen_->options().speech.num_mel;
  std::vector<torch::Tensor> parts;
  sen_->eval();
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < spectrograms.size(); start += kChunk) {
    const auto chunk = spectrograms.subspan(start, std::min(kChunk, spectrograms.size() - start));
    for (const auto* s : chunk) {
      if (s->num_mel() != expected_mel) {
        throw CompatibilityError("spectrogram has " + std::to_string(s->num_mel()) +
                                 " Mel bands, the SEN speech encoder expects " + std::to_string(expected_mel));
      }
    }
    auto [frames, lengths] = pad_spectrograms(chunk, log_floor_);
    parts.push_back(sen_->encode_speech(frames, lengths));
  }
  return torch::cat(parts);
}

torch::Tensor ConditionEncoder::encode_corpus(const Corpus& corpus) {
  std::vector<const Spectrogram*> items;
  items.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) items.push_back(&corpus.sample(i).spectrogram);
  return encode(items);
}

ConditionTable condition_table(const Corpus& corpus, ConditionEncoder& encoder) {
  return {encoder.encode_corpus(corpus), encoder.source()};
}

// ---- history ---------------------------------------------------------------

void write_rdg_history(const fs::path& path, std::span<const RdgHistoryRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,L_G,L_D0,L_D1,L_D2,L_RS,kl,d_saturation\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%lld\n", static_cast<long long>(r.step),
                  r.generator, r.discriminator[0], r.discriminator[1], r.discriminator[2], r.relation, r.kl,
                  static_cast<long long>(r.saturation));
    out << line;
  }
}

std::vector<RdgHistoryRow> read_rdg_history(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<RdgHistoryRow> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    RdgHistoryRow r;
    long long step = 0;
    long long sat = 0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf,%lf,%lf,%lld", &step, &r.generator, &r.discriminator[0],
                    &r.discriminator[1], &r.discriminator[2], &r.relation, &r.kl, &sat) != 8) {
      throw ValidationError("malformed history row in " + path.string() + ": " + line);
    }
    r.step = step;
    r.saturation = sat;
    rows.push_back(r);
  }
  return rows;
}

// ---- training ------------------------------------------------------------

torch::Tensor real_images(const Corpus& corpus, std::span<const std::size_t> idx, int64_t scale) {
  for (int64_t stored : kImageScales) {
    if (stored == scale) return corpus.images(idx, scale);
  }
  for (int64_t stored : kImageScales) {
    if (stored > scale && stored % scale == 0) return resize_images(corpus.images(idx, stored), scale);
  }
  throw ValidationError("no stored image scale can be reduced to " + std::to_string(scale) + " px");
}

at::Generator make_generator(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

torch::Tensor noise(int64_t n, int64_t dim, at::Generator& generator) {
  return torch::randn({n, dim}, generator, torch::kFloat32);
}

namespace {

RdgOptions seeded(RdgOptions options, std::uint64_t seed) {
  torch::manual_seed(seed);
  return options;
}

std::vector<std::size_t> train_pool(const Corpus& corpus) { return corpus.indices(Split::kTrain); }

}  // namespace

RdgTrainer::RdgTrainer(const Corpus& corpus, ConditionTable conditions, RdgOptions options, RdgSchedule schedule)
    : corpus_(corpus),
      conditions_(std::move(conditions)),
      schedule_(schedule),
      networks_(seeded(std::move(options), schedule.seed)),
      rng_(derive_seed(schedule.seed, 0xD6)),
      noise_(make_generator(derive_seed(schedule.seed, 0x2A))),
      relations_(corpus.class_ids(), train_pool(corpus)) {
  const auto& opts = networks_.options;
  if (conditions_.vectors.dim() != 2 || conditions_.vectors.size(0) != static_cast<int64_t>(corpus.size())) {
    throw ValidationError("condition table must hold one vector per corpus record");
  }
  if (conditions_.vectors.size(1) != opts.condition_dim) {
    throw CompatibilityError("RDG condition_dim=" + std::to_string(opts.condition_dim) +
                             " but the condition source provides D=" + std::to_string(conditions_.vectors.size(1)));
  }
  if (corpus.indices(Split::kTrain).empty()) throw ValidationError("rdg training needs train records");
  g_optimizer_ = std::make_unique<torch::optim::Adam>(
      networks_.generator_parameters(),
      torch::optim::AdamOptions(schedule_.lr_g).betas({schedule_.beta1, schedule_.beta2}));
  d_optimizer_ = std::make_unique<torch::optim::Adam>(
      networks_.discriminator_parameters(),
      torch::optim::AdamOptions(schedule_.lr_d).betas({schedule_.beta1, schedule_.beta2}));
}

std::span<const RdgHistoryRow> RdgTrainer::run_epoch() {
  const auto& opts = networks_.options;
  auto order = corpus_.indices(Split::kTrain);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng_, i)]);
  const auto batch = static_cast<std::size_t>(std::max<int64_t>(2, schedule_.batch_size));
  const std::size_t usable = order.size() <= batch ? order.size() : order.size() - order.size() % batch;

  const std::size_t first_new = history_.size();
  networks_.train(true);
  for (std::size_t start = 0; start < usable; start += batch) {
    const std::span<const std::size_t> idx(order.data() + start, std::min(batch, usable - start));
    const auto n = static_cast<int64_t>(idx.size());
    const auto condition = conditions_.vectors.index_select(0, index_tensor(idx));
    const auto code = networks_.ca->forward(condition, /*sample=*/true, noise_);
    const auto z = noise(n, opts.z_dim, noise_);
    const auto pyramid = networks_.generator->forward(code.c, z);
    const auto c_fixed = code.c.detach();

    std::vector<torch::Tensor> reals;
    for (int64_t s : opts.scales) reals.push_back(real_images(corpus_, idx, s));

    RdgHistoryRow row;
    row.step = step_;

    // Discriminator phase: D_i on detached fakes, RS on the real relations.
    torch::Tensor d_total = torch::zeros({});
    for (std::size_t i = 0; i < opts.scales.size(); ++i) {
      auto& d = networks_.discriminators[i];
      const auto loss = discriminator_loss(d->forward(reals[i], c_fixed),
                                           d->forward(pyramid.images[i].detach(), c_fixed), &row.saturation);
      row.discriminator[i] = loss.item<double>();
      d_total = d_total + loss;
    }
    torch::Tensor same_class;
    torch::Tensor mismatched;
    if (networks_.relation) {
      const auto rel = relations_.sample(idx, rng_);
      same_class = real_images(corpus_, rel.same_class, opts.final_scale());
      mismatched = real_images(corpus_, rel.mismatched, opts.final_scale());
      d_total = d_total + relation_loss(relation_logits(networks_.relation, reals.back(), same_class, mismatched)).real;
    }
    if (!std::isfinite(d_total.item<double>())) {
      throw DivergenceError("rdg training diverged at step " + std::to_string(step_) + " (discriminator loss)");
    }
    d_optimizer_->zero_grad();
    d_total.backward();
    d_optimizer_->step();

    // Generator phase: updated discriminators judge the same fakes.
    std::vector<DiscriminatorOutput> fake_outputs;
    for (std::size_t i = 0; i < opts.scales.size(); ++i) {
      fake_outputs.push_back(networks_.discriminators[i]->forward(pyramid.images[i], code.c));
    }
    std::optional<RelationLoss> rs_loss;
    if (networks_.relation) {
      rs_loss = relation_loss(
          relation_logits(networks_.relation, reals.back(), same_class, mismatched, pyramid.images.back()));
    }
    const auto g = generator_loss(fake_outputs, rs_loss, code.kl, opts.kl_weight, &row.saturation);
    row.generator = g.total.item<double>();
    row.relation = g.relation.item<double>();
    row.kl = g.kl.item<double>();
    if (!std::isfinite(row.generator)) {
      throw DivergenceError("rdg training diverged at step " + std::to_string(step_) + " (generator loss)");
    }
    g_optimizer_->zero_grad();
    g.total.backward();
    g_optimizer_->step();

    history_.push_back(row);
    ++step_;
  }
  ++epoch_;
  return std::span<const RdgHistoryRow>(history_).subspan(first_new);
}

void RdgTrainer::train_to(int epochs) {
  while (epoch_ < epochs) run_epoch();
}

torch::Tensor RdgTrainer::sample(std::span<const std::size_t> records, int per_record, std::uint64_t seed) {
  if (per_record < 1) throw ValidationError("per_record must be >= 1");
  auto gen = make_generator(seed);
  const auto condition =
      conditions_.vectors.index_select(0, index_tensor(records)).repeat_interleave(per_record, 0);
  const auto z = noise(condition.size(0), networks_.options.z_dim, gen);
  std::vector<torch::Tensor> parts;
  constexpr int64_t kChunk = 64;
  for (int64_t s = 0; s < condition.size(0); s += kChunk) {
    const int64_t len = std::min(kChunk, condition.size(0) - s);
    parts.push_back(networks_.generate(condition.narrow(0, s, len), z.narrow(0, s, len)).images.back());
  }
  networks_.train(true);
  return torch::cat(parts);
}

void RdgTrainer::write_sample_grid(const fs::path& path) {
  auto pool = corpus_.indices(Split::kTrain);
  pool.resize(std::min<std::size_t>(pool.size(), 16));
  const auto images = sample(pool, 1, derive_seed(schedule_.seed, 0x6A1D));
  write_png(path, make_grid(images, 4));
}

void RdgTrainer::save(const fs::path& path, const nlohmann::json& extra) const {
  CheckpointWriter writer("rdg");
  auto& meta = writer.metadata();
  meta["options"] = networks_.options;
  meta["flags"] = networks_.options.flags;
  meta["condition"] = conditions_.source;
  meta["corpus_fingerprint"] = corpus_.fingerprint();
  meta["frontend"] = corpus_.frontend();
  meta["epoch"] = epoch_;
  meta["step"] = step_;
  meta["rng"] = serialize_rng(rng_);
  meta["schedule"] = {{"batch_size", schedule_.batch_size}, {"lr_g", schedule_.lr_g},     {"lr_d", schedule_.lr_d},
                      {"beta1", schedule_.beta1},           {"beta2", schedule_.beta2}, {"seed", schedule_.seed}};
  for (const auto& [k, v] : extra.items()) meta[k] = v;
  writer.module("ca", *networks_.ca);
  writer.module("generator", *networks_.generator);
  for (std::size_t i = 0; i < networks_.discriminators.size(); ++i) {
    writer.module("d" + std::to_string(i), *networks_.discriminators[i]);
  }
  if (networks_.relation) writer.module("rs", *networks_.relation);
  writer.optimizer("g_optimizer", *g_optimizer_);
  writer.optimizer("d_optimizer", *d_optimizer_);
  writer.tensor("noise_state", noise_.get_state());
  writer.save(path);
}

void RdgTrainer::resume(const fs::path& path) {
  CheckpointReader reader(path, "rdg");
  const auto& meta = reader.metadata();
  const auto saved = meta.at("options").get<RdgOptions>();
  if (nlohmann::json(saved) != nlohmann::json(networks_.options)) {
    throw CompatibilityError("cannot resume " + path.string() + ": checkpoint options " +
                             nlohmann::json(saved).dump() + " differ from the run's " +
                             nlohmann::json(networks_.options).dump());
  }
  reader.module("ca", *networks_.ca);
  reader.module("generator", *networks_.generator);
  for (std::size_t i = 0; i < networks_.discriminators.size(); ++i) {
    reader.module("d" + std::to_string(i), *networks_.discriminators[i]);
  }
  if (networks_.relation) reader.module("rs", *networks_.relation);
  reader.optimizer("g_optimizer", *g_optimizer_);
  reader.optimizer("d_optimizer", *d_optimizer_);
  noise_.set_state(reader.tensor("noise_state"));
  epoch_ = meta.at("epoch").get<int>();
  step_ = meta.at("step").get<int64_t>();
  rng_ = deserialize_rng(meta.at("rng").get<std::string>());
  std::erase_if(history_, [&](const RdgHistoryRow& r) { return r.step >= step_; });
}

LoadedRdg load_rdg(const fs::path& path) {
  CheckpointReader reader(path, "rdg");
  LoadedRdg out;
  out.metadata = reader.metadata();
  out.networks = std::make_unique<RdgNetworks>(out.metadata.at("options").get<RdgOptions>());
  reader.module("ca", *out.networks->ca);
  reader.module("generator", *out.networks->generator);
  for (std::size_t i = 0; i < out.networks->discriminators.size(); ++i) {
    reader.module("d" + std::to_string(i), *out.networks->discriminators[i]);
  }
  if (out.networks->relation) reader.module("rs", *out.networks->relation);
  out.networks->train(false);
  out.file_hash = sha256_file(path);
  return out;
}

}  // namespace s2ig
