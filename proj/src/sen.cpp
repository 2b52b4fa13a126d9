#include "s2ig/sen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "s2ig/checkpoint.hpp"
#include "s2ig/corpus.hpp"
#include "s2ig/error.hpp"
#include "s2ig/hash.hpp"

namespace s2ig {
namespace fs = std::filesystem;
namespace nn = torch::nn;
namespace rnn = torch::nn::utils::rnn;

// ---- speech encoder --------------------------------------------------------

SpeechEncoderImpl::SpeechEncoderImpl(SpeechEncoderOptions options) : options_(options) {
  const int64_t pad = options.kernel_size / 2;
  conv1_ = register_module(
      "conv1", nn::Conv1d(nn::Conv1dOptions(options.num_mel, options.conv_channels, options.kernel_size).padding(pad)));
  conv2_ = register_module(
      "conv2",
      nn::Conv1d(nn::Conv1dOptions(options.conv_channels, options.conv_channels, options.kernel_size).padding(pad)));
  gru_ = register_module("gru", nn::GRU(nn::GRUOptions(options.conv_channels, options.gru_hidden)
                                            .num_layers(options.gru_layers)
                                            .bidirectional(true)
                                            .batch_first(true)));
  attention_hidden_ =
      register_module("attention_hidden", nn::Linear(2 * options.gru_hidden, options.attention_dim));
  attention_score_ =
      register_module("attention_score", nn::Linear(nn::LinearOptions(options.attention_dim, 1).bias(false)));
  projection_ = register_module("projection", nn::Linear(2 * options.gru_hidden, options.embed_dim));
}

torch::Tensor SpeechEncoderImpl::forward(const torch::Tensor& frames, const torch::Tensor& lengths) {
  if (frames.dim() != 3 || frames.size(2) != options_.num_mel) {
    throw ValidationError("speech encoder: expected frames [B, T, " + std::to_string(options_.num_mel) + "]");
  }
  const int64_t batch = frames.size(0);
  const int64_t time = frames.size(1);
  const auto lens = lengths.to(torch::kInt64).cpu();
  if (lens.dim() != 1 || lens.size(0) != batch) {
    throw ValidationError("speech encoder: one length per utterance is required");
  }
  if (lens.min().item<int64_t>() <= 0) throw ValidationError("speech encoder: true_length must be positive");
  if (lens.max().item<int64_t>() > time) {
    throw ValidationError("speech encoder: true_length exceeds the padded length");
  }

  const auto steps = torch::arange(time, torch::kInt64).unsqueeze(0);
  const auto valid = steps < lens.unsqueeze(1);                            // [B, T]
  const auto valid_ct = valid.unsqueeze(1).to(frames.scalar_type());      // [B, 1, T]

  auto x = frames.transpose(1, 2) * valid_ct;  // [B, M, T]
  x = torch::leaky_relu(conv1_->forward(x), 0.2) * valid_ct;
  x = torch::leaky_relu(conv2_->forward(x), 0.2) * valid_ct;
  x = x.transpose(1, 2);  // [B, T, C]

  auto packed = rnn::pack_padded_sequence(x, lens, /*batch_first=*/true, /*enforce_sorted=*/false);
  auto packed_out = std::get<0>(gru_->forward_with_packed_input(packed));
  auto hidden = std::get<0>(rnn::pad_packed_sequence(packed_out, /*batch_first=*/true, 0.0, time));

  auto scores = attention_score_->forward(torch::tanh(attention_hidden_->forward(hidden))).squeeze(2);
  scores = scores.masked_fill(valid.logical_not(), -std::numeric_limits<double>::infinity());
  const auto weights = torch::softmax(scores, 1).unsqueeze(2);  // [B, T, 1]
  const auto pooled = (weights * hidden).sum(1);
  return projection_->forward(pooled);
}

// ---- image encoder ---------------------------------------------------------

ImageEncoderImpl::ImageEncoderImpl(std::shared_ptr<ImageFeatureExtractor> backbone, int64_t embed_dim,
                                   int64_t image_size, bool freeze_backbone)
    : backbone_(std::move(backbone)), image_size_(image_size), frozen_(freeze_backbone) {
  backbone_ = register_module("backbone", backbone_);
  projection_ = register_module("projection", nn::Linear(backbone_->feature_dim(), embed_dim));
  if (frozen_) {
    for (auto& p : backbone_->parameters()) p.set_requires_grad(false);
  }
}

torch::Tensor ImageEncoderImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != image_size_ || images.size(3) != image_size_) {
    std::ostringstream got;
    got << images.sizes();
    throw ValidationError("image encoder expects [B, 3, " + std::to_string(image_size_) + ", " +
                          std::to_string(image_size_) + "] input, got " + got.str());
  }
  torch::Tensor features;
  if (frozen_) {
    torch::NoGradGuard no_grad;
    backbone_->eval();
    features = backbone_->forward(images);
  } else {
    features = backbone_->forward(images);
  }
  return projection_->forward(features);
}

// ---- network ---------------------------------------------------------------

void SenOptions::validate() const {
  if (num_classes < 2) throw ValidationError("sen: num_classes must be >= 2");
  if (embed_dim < 1) throw ValidationError("sen: embed_dim must be positive");
  if (!(beta > 0.0)) throw ValidationError("sen: beta must be positive");
  if (speech.embed_dim != embed_dim) throw ValidationError("sen: speech encoder and common space disagree on D");
}

void to_json(nlohmann::json& j, const SenOptions& o) {
  j = nlohmann::json{{"num_classes", o.num_classes},
                     {"embed_dim", o.embed_dim},
                     {"image_size", o.image_size},
                     {"beta", o.beta},
                     {"freeze_backbone", o.freeze_backbone},
                     {"speech",
                      {{"num_mel", o.speech.num_mel},
                       {"conv_channels", o.speech.conv_channels},
                       {"kernel_size", o.speech.kernel_size},
                       {"gru_hidden", o.speech.gru_hidden},
                       {"gru_layers", o.speech.gru_layers},
                       {"attention_dim", o.speech.attention_dim}}},
                     {"backbone", {{"working_size", o.backbone.working_size}, {"channels", o.backbone.channels}}},
                     {"backbone_checkpoint", o.backbone_checkpoint},
                     {"backbone_script", o.backbone_script},
                     {"script_input_size", o.script_input_size},
                     {"script_feature_dim", o.script_feature_dim}};
}

void from_json(const nlohmann::json& j, SenOptions& o) {
  j.at("num_classes").get_to(o.num_classes);
  j.at("embed_dim").get_to(o.embed_dim);
  j.at("image_size").get_to(o.image_size);
  j.at("beta").get_to(o.beta);
  j.at("freeze_backbone").get_to(o.freeze_backbone);
  const auto& s = j.at("speech");
  s.at("num_mel").get_to(o.speech.num_mel);
  s.at("conv_channels").get_to(o.speech.conv_channels);
  s.at("kernel_size").get_to(o.speech.kernel_size);
  s.at("gru_hidden").get_to(o.speech.gru_hidden);
  s.at("gru_layers").get_to(o.speech.gru_layers);
  s.at("attention_dim").get_to(o.speech.attention_dim);
  o.speech.embed_dim = o.embed_dim;
  j.at("backbone").at("working_size").get_to(o.backbone.working_size);
  j.at("backbone").at("channels").get_to(o.backbone.channels);
  o.backbone_checkpoint = j.value("backbone_checkpoint", std::string());
  o.backbone_script = j.value("backbone_script", std::string());
  o.script_input_size = j.value("script_input_size", int64_t{299});
  o.script_feature_dim = j.value("script_feature_dim", int64_t{2048});
}

std::shared_ptr<ImageFeatureExtractor> make_image_backbone(const SenOptions& options) {
  if (!options.backbone_script.empty()) {
    return std::make_shared<TorchScriptFeatureExtractor>(options.backbone_script, options.script_input_size,
                                                         options.script_feature_dim);
  }
  if (!options.backbone_checkpoint.empty()) {
    auto desk = DeskBackbone::load(options.backbone_checkpoint);
    // Copy so the embedding network owns independent weights.
    auto extractor = std::make_shared<ConvFeatureExtractor>(desk->model()->extractor()->options());
    torch::NoGradGuard no_grad;
    const auto src = desk->model()->extractor()->named_parameters();
    for (auto& p : extractor->named_parameters()) p.value().copy_(src[p.key()]);
    return extractor;
  }
  return std::make_shared<ConvFeatureExtractor>(options.backbone);
}

SpeechEmbeddingNetworkImpl::SpeechEmbeddingNetworkImpl(SenOptions options) : options_(std::move(options)) {
  options_.speech.embed_dim = options_.embed_dim;
  options_.validate();
  const bool frozen = options_.freeze_backbone || !options_.backbone_script.empty();
  image_encoder_ = register_module(
      "image_encoder", ImageEncoder(make_image_backbone(options_), options_.embed_dim, options_.image_size, frozen));
  speech_encoder_ = register_module("speech_encoder", SpeechEncoder(options_.speech));
  speech_perception_ = register_module("speech_perception", nn::Linear(options_.embed_dim, options_.num_classes));
  image_perception_ = register_module("image_perception", nn::Linear(options_.embed_dim, options_.num_classes));
}

std::vector<torch::Tensor> SpeechEmbeddingNetworkImpl::trainable_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& p : parameters()) {
    if (p.requires_grad()) out.push_back(p);
  }
  return out;
}

void SpeechEmbeddingNetworkImpl::train(bool on) {
  nn::Module::train(on);
  if (image_encoder_->frozen()) image_encoder_->backbone()->eval();
}

// ---- objectives ------------------------------------------------------------

torch::Tensor class_mask(const torch::Tensor& class_ids) {
  const auto ids = class_ids.to(torch::kInt64).flatten();
  const int64_t n = ids.size(0);
  const auto same = ids.unsqueeze(0) == ids.unsqueeze(1);
  const auto eye = torch::eye(n, torch::kBool);
  return torch::logical_not(same.logical_and(eye.logical_not())).to(torch::kFloat32);
}

torch::Tensor similarity_matrix(const torch::Tensor& speech, const torch::Tensor& image) {
  if (speech.dim() != 2 || image.dim() != 2 || speech.size(1) != image.size(1)) {
    throw ValidationError("similarity_matrix: expected [n, D] and [m, D] embeddings");
  }
  const auto speech_norm = speech.norm(2, 1, /*keepdim=*/true);
  const auto image_norm = image.norm(2, 1, /*keepdim=*/true);
  if ((speech_norm <= 1e-12).any().item<bool>() || (image_norm <= 1e-12).any().item<bool>()) {
    throw ValidationError("similarity_matrix: zero-norm embedding");
  }
  return torch::matmul(speech / speech_norm, (image / image_norm).t());
}

MatchingLoss matching_loss(const torch::Tensor& speech, const torch::Tensor& image, const torch::Tensor& mask,
                           double beta) {
  const int64_t n = speech.size(0);
  if (image.size(0) != n || mask.dim() != 2 || mask.size(0) != n || mask.size(1) != n) {
    throw ValidationError("matching_loss: batch sizes of speech, image and mask disagree");
  }
  const auto keep = mask.to(torch::kFloat64) > 0.5;
  if ((keep.sum(1) == 0).any().item<bool>()) {
    throw ValidationError("matching_loss: a mask row is all zero, the softmax cannot be normalised");
  }
  if (!keep.diagonal().all().item<bool>()) {
    throw ValidationError("matching_loss: mask must keep every matched pair (M_ii = 1)");
  }
  const auto logits = beta * similarity_matrix(speech, image);
  const auto positive = logits.diagonal();
  const double neg_inf = -std::numeric_limits<double>::infinity();

  const auto speech_rows = logits.masked_fill(keep.logical_not(), neg_inf);
  const auto image_rows = logits.t().masked_fill(keep.t().logical_not(), neg_inf);
  MatchingLoss out;
  out.speech_to_image = -(positive - torch::logsumexp(speech_rows, 1)).sum();
  out.image_to_speech = -(positive - torch::logsumexp(image_rows, 1)).sum();
  out.total = out.speech_to_image + out.image_to_speech;
  return out;
}

MatchingLoss matching_loss(const torch::Tensor& speech, const torch::Tensor& image, const torch::Tensor& class_ids,
                           int num_classes, double beta) {
  if (num_classes < 2) throw ValidationError("matching_loss: need at least 2 classes");
  return matching_loss(speech, image, class_mask(class_ids), beta);
}

torch::Tensor distinctive_loss(const torch::Tensor& speech_logits, const torch::Tensor& image_logits,
                               const torch::Tensor& class_ids) {
  if (speech_logits.sizes() != image_logits.sizes() || speech_logits.dim() != 2) {
    throw ValidationError("distinctive_loss: logits must both be [n, N]");
  }
  const int64_t num_classes = speech_logits.size(1);
  if (num_classes < 2) throw ValidationError("distinctive_loss: need at least 2 classes");
  const auto ids = class_ids.to(torch::kInt64).flatten();
  if (ids.size(0) != speech_logits.size(0)) throw ValidationError("distinctive_loss: one class id per item");
  if ((ids < 0).any().item<bool>() || (ids >= num_classes).any().item<bool>()) {
    throw ValidationError("distinctive_loss: class id outside [0, " + std::to_string(num_classes) + ")");
  }
  const auto index = ids.unsqueeze(1);
  const auto speech_term = torch::log_softmax(speech_logits, 1).gather(1, index);
  const auto image_term = torch::log_softmax(image_logits, 1).gather(1, index);
  return -(speech_term + image_term).sum();
}

SenLoss sen_total_loss(const torch::Tensor& speech, const torch::Tensor& image, const torch::Tensor& speech_logits,
                       const torch::Tensor& image_logits, const torch::Tensor& class_ids, int num_classes,
                       double beta) {
  SenLoss out;
  out.matching = matching_loss(speech, image, class_ids, num_classes, beta);
  out.distinctive = distinctive_loss(speech_logits, image_logits, class_ids);
  out.total = out.matching.total + out.distinctive;
  return out;
}

// ---- history ---------------------------------------------------------------

void write_sen_history(const fs::path& path, std::span<const SenHistoryRow> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,L_m,L_d,L_SEN\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%lld,%.9g,%.9g,%.9g\n", static_cast<long long>(r.step), r.matching,
                  r.distinctive, r.total);
    out << line;
  }
}

std::vector<SenHistoryRow> read_sen_history(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<SenHistoryRow> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    SenHistoryRow r;
    long long step = 0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf", &step, &r.matching, &r.distinctive, &r.total) != 4) {
      throw ValidationError("malformed history row in " + path.string() + ": " + line);
    }
    r.step = step;
    rows.push_back(r);
  }
  return rows;
}

// ---- trainer ---------------------------------------------------------------

SenTrainer::SenTrainer(const Corpus& corpus, SenOptions options, SenSchedule schedule)
    : corpus_(corpus), options_(std::move(options)), schedule_(schedule), rng_(derive_seed(schedule.seed, 0x5E17)) {
  if (corpus.num_classes() < 2) throw ValidationError("sen training needs at least 2 classes");
  options_.num_classes = corpus.num_classes();
  options_.speech.num_mel = corpus.frontend().num_mel;
  torch::manual_seed(schedule_.seed);
  network_ = SpeechEmbeddingNetwork(options_);
  optimizer_ = std::make_unique<torch::optim::Adam>(network_->trainable_parameters(),
                                                    torch::optim::AdamOptions(schedule_.learning_rate));
}

std::span<const SenHistoryRow> SenTrainer::run_epoch() {
  auto order = corpus_.indices(Split::kTrain);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng_, i)]);
  const auto batch = static_cast<std::size_t>(std::max<int64_t>(2, schedule_.batch_size));
  // Full batches only, so the summed losses are comparable across steps.
  const std::size_t usable = order.size() <= batch ? order.size() : order.size() - order.size() % batch;

  const std::size_t first_new = history_.size();
  network_->train();
  for (std::size_t start = 0; start < usable; start += batch) {
    const std::span<const std::size_t> idx(order.data() + start, std::min(batch, usable - start));
    const auto speech = corpus_.speech(idx);
    auto images = corpus_.images(idx, options_.image_size);
    if (schedule_.augment) images = augment_images(images, rng_);
    const auto labels = corpus_.labels(idx);

    const auto a = network_->encode_speech(speech.frames, speech.lengths);
    const auto v = network_->encode_image(images);
    const auto loss = sen_total_loss(a, v, network_->classify_speech(a), network_->classify_image(v), labels,
                                     options_.num_classes, options_.beta);

    SenHistoryRow row;
    row.step = step_;
    row.matching = loss.matching.total.item<double>();
    row.distinctive = loss.distinctive.item<double>();
    row.total = loss.total.item<double>();
    if (!std::isfinite(row.total)) {
      std::ostringstream msg;
      msg << "sen training diverged at step " << step_ << ": L_m=" << row.matching << " L_d=" << row.distinctive;
      throw DivergenceError(msg.str());
    }
    optimizer_->zero_grad();
    loss.total.backward();
    optimizer_->step();
    history_.push_back(row);
    ++step_;
  }
  ++epoch_;
  return std::span<const SenHistoryRow>(history_).subspan(first_new);
}

void SenTrainer::train_to(int epochs) {
  while (epoch_ < epochs) run_epoch();
}

void SenTrainer::save(const fs::path& path, const nlohmann::json& extra) const {
  CheckpointWriter writer("sen");
  auto& meta = writer.metadata();
  meta["options"] = options_;
  meta["corpus_fingerprint"] = corpus_.fingerprint();
  meta["epoch"] = epoch_;
  meta["step"] = step_;
  meta["rng"] = serialize_rng(rng_);
  meta["frontend"] = corpus_.frontend();
  for (const auto& [k, v] : extra.items()) meta[k] = v;
  writer.module("network", *network_);
  writer.optimizer("optimizer", *optimizer_);
  writer.save(path);
}

void SenTrainer::resume(const fs::path& path) {
  CheckpointReader reader(path, "sen");
  const auto& meta = reader.metadata();
  const SenOptions saved = meta.at("options").get<SenOptions>();
  if (saved.embed_dim != options_.embed_dim || saved.num_classes != options_.num_classes) {
    throw CompatibilityError("cannot resume: checkpoint has D=" + std::to_string(saved.embed_dim) +
                             ", N=" + std::to_string(saved.num_classes) + " but the run has D=" +
                             std::to_string(options_.embed_dim) + ", N=" + std::to_string(options_.num_classes));
  }
  reader.module("network", *network_);
  reader.optimizer("optimizer", *optimizer_);
  epoch_ = meta.at("epoch").get<int>();
  step_ = meta.at("step").get<int64_t>();
  rng_ = deserialize_rng(meta.at("rng").get<std::string>());
  std::erase_if(history_, [&](const SenHistoryRow& r) { return r.step >= step_; });
}

LoadedSen load_sen(const fs::path& path) {
  CheckpointReader reader(path, "sen");
  LoadedSen out;
  out.metadata = reader.metadata();
  out.network = SpeechEmbeddingNetwork(out.metadata.at("options").get<SenOptions>());
  reader.module("network", *out.network);
  out.network->eval();
  out.file_hash = sha256_file(path);
  return out;
}

// ---- inference helpers ----------------------------------------------------

namespace {
constexpr std::size_t kEmbedChunk = 32;
}

torch::Tensor embed_speech(SpeechEmbeddingNetwork& network, const Corpus& corpus,
                           std::span<const std::size_t> records) {
  torch::NoGradGuard no_grad;
  network->eval();
  std::vector<torch::Tensor> parts;
  for (std::size_t start = 0; start < records.size(); start += kEmbedChunk) {
    const auto idx = records.subspan(start, std::min(kEmbedChunk, records.size() - start));
    const auto batch = corpus.speech(idx);
    parts.push_back(network->encode_speech(batch.frames, batch.lengths));
  }
  return torch::cat(parts);
}

torch::Tensor embed_images(SpeechEmbeddingNetwork& network, const Corpus& corpus,
                           std::span<const std::size_t> records) {
  torch::NoGradGuard no_grad;
  network->eval();
  std::vector<torch::Tensor> parts;
  for (std::size_t start = 0; start < records.size(); start += kEmbedChunk) {
    const auto idx = records.subspan(start, std::min(kEmbedChunk, records.size() - start));
    parts.push_back(network->encode_image(corpus.images(idx, network->options().image_size)));
  }
  return torch::cat(parts);
}

double speech_to_image_recall_at_1(SpeechEmbeddingNetwork& network, const Corpus& corpus,
                                   std::span<const std::size_t> records) {
  if (records.empty()) throw ValidationError("recall@1: no records");
  const auto a = embed_speech(network, corpus, records);
  const auto v = embed_images(network, corpus, records);
  const auto best = similarity_matrix(a, v).argmax(1);
  int hits = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto j = static_cast<std::size_t>(best[static_cast<int64_t>(i)].item<int64_t>());
    if (corpus.sample(records[j]).class_id == corpus.sample(records[i]).class_id) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

}  // namespace s2ig
