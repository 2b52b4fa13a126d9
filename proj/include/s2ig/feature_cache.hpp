#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "s2ig/json.hpp"
#include "s2ig/metrics.hpp"

namespace s2ig {

inline constexpr std::uint32_t kFeatureCacheVersion = 1;

// Versioned binary container of named float32 matrices plus a JSON metadata
// block. Layout (little endian): "S2IGFEAT", u32 version, u32 metadata bytes,
// metadata, u32 count, then per matrix: u32 name bytes, name, u64 rows,
// u64 cols, rows*cols float32 in row-major order.
struct FeatureCache {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix>> matrices;

  const Matrix& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_feature_cache(const std::filesystem::path& path, const FeatureCache& cache);
FeatureCache read_feature_cache(const std::filesystem::path& path);

// True for a regular file starting with the cache magic.
bool is_feature_cache(const std::filesystem::path& path);

}  // namespace s2ig
