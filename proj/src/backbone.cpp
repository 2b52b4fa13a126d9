#include "s2ig/backbone.hpp"

#include <algorithm>

#include "s2ig/checkpoint.hpp"
#include "s2ig/corpus.hpp"
#include "s2ig/error.hpp"
#include "s2ig/hash.hpp"
#include "s2ig/image_io.hpp"

namespace s2ig {
namespace fs = std::filesystem;
namespace nn = torch::nn;

namespace {

constexpr int64_t kInferenceChunk = 64;

void check_images(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != images.size(3)) {
    throw ValidationError("expected a batch of square RGB images [N, 3, S, S]");
  }
}

}  // namespace

ConvFeatureExtractor::ConvFeatureExtractor(ConvFeatureExtractorOptions options) : options_(options) {
  const int64_t c = options_.channels;
  nn::Sequential layers;
  const int64_t widths[] = {3, c, 2 * c, 4 * c, 4 * c};
  for (int i = 0; i < 4; ++i) {
    layers->push_back(nn::Conv2d(nn::Conv2dOptions(widths[i], widths[i + 1], 3).padding(1)));
    layers->push_back(nn::BatchNorm2d(widths[i + 1]));
    layers->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    layers->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2)));
  }
  layers_ = register_module("layers", layers);
}

torch::Tensor ConvFeatureExtractor::forward(const torch::Tensor& images) {
  check_images(images);
  auto x = resize_images(images, options_.working_size);
  x = layers_->forward(x);
  return x.mean({2, 3});
}

TorchScriptFeatureExtractor::TorchScriptFeatureExtractor(const fs::path& path, int64_t input_size,
                                                         int64_t feature_dim)
    : input_size_(input_size), feature_dim_(feature_dim) {
  try {
    module_ = torch::jit::load(path.string());
  } catch (const c10::Error& e) {
    throw ValidationError("cannot load scripted backbone " + path.string() + ": " +
                          e.what_without_backtrace());
  }
  module_.eval();
  hash_ = sha256_file(path);
}

std::pair<torch::Tensor, torch::Tensor> TorchScriptFeatureExtractor::logits_and_features(
    const torch::Tensor& images) {
  check_images(images);
  auto x = resize_images(images, input_size_);
  auto out = module_.forward({x});
  if (!out.isTuple() || out.toTuple()->elements().size() != 2) {
    throw CompatibilityError("scripted backbone must return (logits, features)");
  }
  auto logits = out.toTuple()->elements()[0].toTensor();
  auto features = out.toTuple()->elements()[1].toTensor().flatten(1);
  if (features.size(1) != feature_dim_) {
    throw CompatibilityError("scripted backbone produced " + std::to_string(features.size(1)) +
                             "-d features, configured for " + std::to_string(feature_dim_));
  }
  return {logits, features};
}

torch::Tensor TorchScriptFeatureExtractor::forward(const torch::Tensor& images) {
  return logits_and_features(images).second;
}

DeskClassifierImpl::DeskClassifierImpl(int num_classes, ConvFeatureExtractorOptions options)
    : num_classes_(num_classes) {
  if (num_classes < 2) throw ValidationError("desk classifier needs at least 2 classes");
  extractor_ = register_module("extractor", std::make_shared<ConvFeatureExtractor>(options));
  head_ = register_module("head", nn::Linear(extractor_->feature_dim(), num_classes));
}

torch::Tensor DeskClassifierImpl::forward(const torch::Tensor& images) {
  return head_->forward(extractor_->forward(images));
}

DeskBackbone::DeskBackbone(DeskClassifier model, std::string fingerprint)
    : model_(std::move(model)), fingerprint_(std::move(fingerprint)) {
  model_->eval();
}

BackboneOutput DeskBackbone::run(const torch::Tensor& images) {
  check_images(images);
  torch::NoGradGuard no_grad;
  model_->eval();
  std::vector<torch::Tensor> probs;
  std::vector<torch::Tensor> feats;
  for (int64_t start = 0; start < images.size(0); start += kInferenceChunk) {
    const auto chunk = images.narrow(0, start, std::min(kInferenceChunk, images.size(0) - start));
    const auto f = model_->extractor()->forward(chunk);
    probs.push_back(torch::softmax(model_->head()->forward(f), 1));
    feats.push_back(f);
  }
  return {torch::cat(probs), torch::cat(feats)};
}

std::string DeskBackbone::description() const {
  return "desk-classifier(channels=" + std::to_string(model_->extractor()->options().channels) +
         ",classes=" + std::to_string(model_->num_classes()) +
         (fingerprint_.empty() ? std::string() : ",corpus=" + fingerprint_.substr(0, 12)) + ")";
}

void DeskBackbone::save(const fs::path& path) const {
  CheckpointWriter writer("backbone");
  writer.metadata()["num_classes"] = model_->num_classes();
  writer.metadata()["channels"] = model_->extractor()->options().channels;
  writer.metadata()["working_size"] = model_->extractor()->options().working_size;
  writer.metadata()["corpus_fingerprint"] = fingerprint_;
  writer.module("classifier", *model_);
  writer.save(path);
}

std::unique_ptr<DeskBackbone> DeskBackbone::load(const fs::path& path) {
  CheckpointReader reader(path, "backbone");
  const auto& meta = reader.metadata();
  ConvFeatureExtractorOptions options;
  options.channels = meta.at("channels").get<int64_t>();
  options.working_size = meta.at("working_size").get<int64_t>();
  DeskClassifier model(meta.at("num_classes").get<int>(), options);
  reader.module("classifier", *model);
  return std::make_unique<DeskBackbone>(model, meta.value("corpus_fingerprint", std::string()));
}

std::unique_ptr<DeskBackbone> train_desk_backbone(const Corpus& corpus, std::span<const std::size_t> records,
                                                  const DeskBackboneSchedule& schedule) {
  if (records.empty()) throw ValidationError("desk backbone: no training records");
  torch::manual_seed(schedule.seed);
  Rng rng(derive_seed(schedule.seed, 0xBAC0));
  DeskClassifier model(corpus.num_classes(), schedule.extractor);
  torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(schedule.learning_rate));

  std::vector<std::size_t> order(records.begin(), records.end());
  const auto batch = static_cast<std::size_t>(std::max<int64_t>(1, schedule.batch_size));
  model->train();
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(batch, order.size() - start));
      const auto images = augment_images(corpus.images(idx, kImageScales.back()), rng);
      const auto loss = torch::nn::functional::cross_entropy(model->forward(images), corpus.labels(idx));
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
    }
  }
  return std::make_unique<DeskBackbone>(model, corpus.fingerprint());
}

TorchScriptBackbone::TorchScriptBackbone(const fs::path& path, int64_t input_size, int64_t num_classes,
                                         int64_t feature_dim)
    : extractor_(std::make_shared<TorchScriptFeatureExtractor>(path, input_size, feature_dim)),
      path_(path),
      num_classes_(num_classes) {}

BackboneOutput TorchScriptBackbone::run(const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> probs;
  std::vector<torch::Tensor> feats;
  for (int64_t start = 0; start < images.size(0); start += kInferenceChunk) {
    const auto chunk = images.narrow(0, start, std::min(kInferenceChunk, images.size(0) - start));
    auto [logits, features] = extractor_->logits_and_features(chunk);
    if (logits.size(1) != num_classes_) {
      throw CompatibilityError("scripted backbone produced " + std::to_string(logits.size(1)) +
                               " classes, configured for " + std::to_string(num_classes_));
    }
    probs.push_back(torch::softmax(logits.to(torch::kFloat32), 1));
    feats.push_back(features.to(torch::kFloat32));
  }
  return {torch::cat(probs), torch::cat(feats)};
}

std::string TorchScriptBackbone::description() const {
  return "torchscript(" + path_.filename().string() + ",sha256=" + extractor_->file_hash().substr(0, 12) + ")";
}

}  // namespace s2ig
