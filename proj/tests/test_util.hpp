#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <string>

#include "s2ig/corpus.hpp"
#include "s2ig/synthetic.hpp"

namespace s2ig {

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("s2ig-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// The 8 x 10 synthetic corpus, written once per test process.
inline const std::filesystem::path& toy_manifest() {
  static TempDir dir;
  static const std::filesystem::path manifest = [] {
    SyntheticCorpusOptions o;
    o.out_dir = dir.path() / "corpus";
    return make_synthetic_corpus(o);
  }();
  return manifest;
}

inline const Corpus& toy_corpus() {
  static const Corpus corpus = Corpus::load(toy_manifest(), FrontendConfig{});
  return corpus;
}

// ||a - n|| / max(||a||, ||n||, floor)
inline double relative_error(const torch::Tensor& analytic, const torch::Tensor& numeric, double floor = 1e-12) {
  const double scale = std::max({analytic.norm().item<double>(), numeric.norm().item<double>(), floor});
  return (analytic - numeric).norm().item<double>() / scale;
}

}  // namespace s2ig
