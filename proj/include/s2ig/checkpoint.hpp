#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>

#include "s2ig/json.hpp"

namespace s2ig {

inline constexpr int kCheckpointFormatVersion = 1;

// Versioned container: a torch archive holding named modules, optimizer
// states and a JSON metadata block {kind, format_version, ...}.
class CheckpointWriter {
 public:
  explicit CheckpointWriter(std::string kind);

  nlohmann::json& metadata() { return metadata_; }
  CheckpointWriter& module(const std::string& name, const torch::nn::Module& module);
  CheckpointWriter& optimizer(const std::string& name, const torch::optim::Optimizer& optimizer);
  CheckpointWriter& tensor(const std::string& name, const torch::Tensor& value);
  // Writes to a temporary file and renames, so readers never see a partial file.
  void save(const std::filesystem::path& path);

 private:
  torch::serialize::OutputArchive archive_;
  nlohmann::json metadata_;
};

class CheckpointReader {
 public:
  // Throws CompatibilityError when the kind differs or the format version is
  // newer than this build understands.
  CheckpointReader(const std::filesystem::path& path, const std::string& expected_kind);

  const nlohmann::json& metadata() const { return metadata_; }
  const std::filesystem::path& path() const { return path_; }
  void module(const std::string& name, torch::nn::Module& module);
  void optimizer(const std::string& name, torch::optim::Optimizer& optimizer);
  torch::Tensor tensor(const std::string& name);
  bool has(const std::string& name);

 private:
  std::filesystem::path path_;
  torch::serialize::InputArchive archive_;
  nlohmann::json metadata_;
};

}  // namespace s2ig
