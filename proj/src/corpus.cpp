#include "s2ig/corpus.hpp"

#include <algorithm>
#include <fstream>

#include "s2ig/error.hpp"
#include "s2ig/hash.hpp"
#include "s2ig/image_io.hpp"
#include "s2ig/log.hpp"

namespace s2ig {
namespace fs = std::filesystem;

Corpus Corpus::load(const fs::path& manifest, const FrontendConfig& frontend,
                    std::optional<int> num_classes) {
  frontend.validate();
  Corpus corpus;
  corpus.entries_ = load_manifest(manifest, num_classes);
  corpus.num_classes_ = num_classes ? *num_classes : manifest_num_classes(manifest);
  corpus.frontend_ = frontend;
  corpus.fingerprint_ = sha256_file(manifest);
  if (corpus.entries_.empty()) throw ValidationError(manifest.string() + ": manifest has no entries");

  bool synthetic = false;
  {
    std::ifstream in(manifest);
    std::string first;
    std::getline(in, first);
    synthetic = first.starts_with("# synthetic corpus");
  }

  corpus.samples_.reserve(corpus.entries_.size());
  for (const auto& e : corpus.entries_) {
    PairedSample s;
    s.spectrogram = load_spectrogram(e.audio_path, frontend);
    auto source = read_image(e.image_path).unsqueeze(0);
    source = resize_images(source, kImageScales.back());
    for (const auto& [scale, img] : image_pyramid(source, kImageScales)) {
      s.images[scale] = img.squeeze(0).contiguous();
    }
    s.class_id = e.class_id;
    s.split = e.split;
    s.is_synthetic = synthetic;
    corpus.samples_.push_back(std::move(s));
  }
  return corpus;
}

std::vector<std::size_t> Corpus::indices(Split split) const { return indices_of(entries_, split); }

std::vector<int> Corpus::class_ids() const {
  std::vector<int> ids;
  ids.reserve(samples_.size());
  for (const auto& s : samples_) ids.push_back(s.class_id);
  return ids;
}

SpeechBatch Corpus::speech(std::span<const std::size_t> idx) const {
  std::vector<const Spectrogram*> items;
  items.reserve(idx.size());
  for (std::size_t i : idx) items.push_back(&samples_.at(i).spectrogram);
  auto [frames, lengths] = pad_spectrograms(items, frontend_.log_floor);
  return {frames, lengths};
}

torch::Tensor Corpus::images(std::span<const std::size_t> idx, int64_t scale) const {
  std::vector<torch::Tensor> items;
  items.reserve(idx.size());
  for (std::size_t i : idx) items.push_back(samples_.at(i).images.at(scale));
  return torch::stack(items);
}

torch::Tensor Corpus::labels(std::span<const std::size_t> idx) const {
  auto out = torch::empty({static_cast<int64_t>(idx.size())}, torch::kInt64);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out[static_cast<int64_t>(k)] = samples_.at(idx[k]).class_id;
  }
  return out;
}

torch::Tensor augment_images(const torch::Tensor& batch256, Rng& rng) {
  const int64_t size = batch256.size(-1);
  const auto enlarged = resize_images(batch256, kAugmentResize);
  const int64_t slack = kAugmentResize - size;
  std::vector<torch::Tensor> out;
  out.reserve(static_cast<std::size_t>(batch256.size(0)));
  for (int64_t i = 0; i < batch256.size(0); ++i) {
    const auto top = static_cast<int64_t>(uniform_index(rng, static_cast<std::size_t>(slack + 1)));
    const auto left = static_cast<int64_t>(uniform_index(rng, static_cast<std::size_t>(slack + 1)));
    auto crop = enlarged[i].narrow(1, top, size).narrow(2, left, size);
    if (uniform_index(rng, 2) == 1) crop = crop.flip({2});
    out.push_back(crop);
  }
  return torch::stack(out).contiguous();
}

std::map<int64_t, torch::Tensor> image_pyramid(const torch::Tensor& batch256,
                                               std::span<const int64_t> scales) {
  std::map<int64_t, torch::Tensor> out;
  for (int64_t s : scales) out[s] = resize_images(batch256, s);
  return out;
}

RelationSampler::RelationSampler(std::vector<int> class_of, std::span<const std::size_t> pool)
    : class_of_(std::move(class_of)) {
  if (pool.empty()) {
    for (std::size_t i = 0; i < class_of_.size(); ++i) members_[class_of_[i]].push_back(i);
  } else {
    for (std::size_t i : pool) members_[class_of_.at(i)].push_back(i);
  }
  for (const auto& [cls, _] : members_) classes_.push_back(cls);
  if (classes_.size() < 2) {
    throw ValidationError("relation sampling needs at least 2 classes, found " +
                          std::to_string(classes_.size()));
  }
}

RelationSamplingBatch RelationSampler::sample(std::span<const std::size_t> ground_truth, Rng& rng) const {
  RelationSamplingBatch batch;
  for (std::size_t gt : ground_truth) {
    const int cls = class_of_.at(gt);
    batch.ground_truth.push_back(gt);
    batch.ground_truth_classes.push_back(cls);

    std::vector<std::size_t> partners;
    if (auto it = members_.find(cls); it != members_.end()) {
      for (std::size_t m : it->second) {
        if (m != gt) partners.push_back(m);
      }
    }
    std::size_t same = gt;
    if (partners.empty()) {
      if (warned_.insert(cls).second) {
        log::warn("class " + std::to_string(cls) + " has a single member; using the ground truth as its same-class image");
      }
    } else {
      same = partners[uniform_index(rng, partners.size())];
    }
    batch.same_class.push_back(same);
    batch.same_class_classes.push_back(class_of_.at(same));

    std::vector<int> others;
    others.reserve(classes_.size() - 1);
    for (int c : classes_) {
      if (c != cls) others.push_back(c);
    }
    const int other = others[uniform_index(rng, others.size())];
    const auto& pool = members_.at(other);
    const std::size_t mismatched = pool[uniform_index(rng, pool.size())];
    batch.mismatched.push_back(mismatched);
    batch.mismatched_classes.push_back(other);
  }
  return batch;
}

RelationSamplingBatch sample_relation_batch(const std::vector<ManifestEntry>& entries,
                                            std::span<const std::size_t> ground_truth, Rng& rng) {
  std::vector<int> class_of;
  class_of.reserve(entries.size());
  for (const auto& e : entries) class_of.push_back(e.class_id);
  return RelationSampler(std::move(class_of)).sample(ground_truth, rng);
}

}  // namespace s2ig
