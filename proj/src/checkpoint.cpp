#include "s2ig/checkpoint.hpp"

#include "s2ig/error.hpp"

namespace s2ig {
namespace fs = std::filesystem;

namespace {
constexpr const char* kMetadataKey = "metadata";
}

CheckpointWriter::CheckpointWriter(std::string kind) {
  metadata_["kind"] = std::move(kind);
  metadata_["format_version"] = kCheckpointFormatVersion;
}

CheckpointWriter& CheckpointWriter::module(const std::string& name, const torch::nn::Module& module) {
  torch::serialize::OutputArchive nested;
  module.save(nested);
  archive_.write(name, nested);
  return *this;
}

CheckpointWriter& CheckpointWriter::optimizer(const std::string& name,
                                              const torch::optim::Optimizer& optimizer) {
  torch::serialize::OutputArchive nested;
  optimizer.save(nested);
  archive_.write(name, nested);
  return *this;
}

CheckpointWriter& CheckpointWriter::tensor(const std::string& name, const torch::Tensor& value) {
  archive_.write(name, value);
  return *this;
}

void CheckpointWriter::save(const fs::path& path) {
  archive_.write(kMetadataKey, c10::IValue(metadata_.dump()));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  try {
    archive_.save_to(tmp.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  fs::rename(tmp, path);
}

CheckpointReader::CheckpointReader(const fs::path& path, const std::string& expected_kind)
    : path_(path) {
  if (!fs::is_regular_file(path)) throw ValidationError("checkpoint not found: " + path.string());
  try {
    archive_.load_from(path.string());
    c10::IValue meta;
    archive_.read(kMetadataKey, meta);
    metadata_ = nlohmann::json::parse(meta.toStringRef());
  } catch (const c10::Error& e) {
    throw ValidationError("unreadable checkpoint " + path.string() + ": " + e.what_without_backtrace());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("corrupt checkpoint metadata in " + path.string() + ": " + e.what());
  }
  const std::string kind = metadata_.value("kind", std::string());
  if (kind != expected_kind) {
    throw CompatibilityError(path.string() + " is a '" + kind + "' checkpoint, expected '" +
                             expected_kind + "'");
  }
  const int version = metadata_.value("format_version", 0);
  if (version < 1 || version > kCheckpointFormatVersion) {
    throw CompatibilityError(path.string() + ": unsupported checkpoint format version " +
                             std::to_string(version));
  }
}

void CheckpointReader::module(const std::string& name, torch::nn::Module& module) {
  torch::serialize::InputArchive nested;
  if (!archive_.try_read(name, nested)) {
    throw CompatibilityError(path_.string() + ": missing module '" + name + "'");
  }
  try {
    module.load(nested);
  } catch (const c10::Error& e) {
    throw CompatibilityError(path_.string() + ": module '" + name +
                             "' does not match the configured architecture: " + e.what_without_backtrace());
  }
}

void CheckpointReader::optimizer(const std::string& name, torch::optim::Optimizer& optimizer) {
  torch::serialize::InputArchive nested;
  if (!archive_.try_read(name, nested)) {
    throw CompatibilityError(path_.string() + ": missing optimizer state '" + name + "'");
  }
  optimizer.load(nested);
}

torch::Tensor CheckpointReader::tensor(const std::string& name) {
  torch::Tensor value;
  if (!archive_.try_read(name, value)) {
    throw CompatibilityError(path_.string() + ": missing tensor '" + name + "'");
  }
  return value;
}

bool CheckpointReader::has(const std::string& name) {
  torch::serialize::InputArchive nested;
  return archive_.try_read(name, nested);
}

}  // namespace s2ig
