#include "s2ig/feature_cache.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "s2ig/error.hpp"

namespace s2ig {
namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 8> kMagic{'S', '2', 'I', 'G', 'F', 'E', 'A', 'T'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T get_value(std::istream& in, const fs::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof value)) {
    throw ValidationError(path.string() + ": truncated feature cache");
  }
  return value;
}

std::string get_string(std::istream& in, const fs::path& path, std::size_t limit) {
  const auto size = get_value<std::uint32_t>(in, path);
  if (size > limit) throw ValidationError(path.string() + ": corrupt feature cache (string too long)");
  std::string s(size, '\0');
  if (!in.read(s.data(), size)) throw ValidationError(path.string() + ": truncated feature cache");
  return s;
}

}  // namespace

const Matrix& FeatureCache::get(const std::string& name) const {
  for (const auto& [n, m] : matrices) {
    if (n == name) return m;
  }
  throw ValidationError("feature cache has no matrix '" + name + "'");
}

bool FeatureCache::has(const std::string& name) const {
  for (const auto& entry : matrices) {
    if (entry.first == name) return true;
  }
  return false;
}

void write_feature_cache(const fs::path& path, const FeatureCache& cache) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kFeatureCacheVersion);
  const std::string meta = cache.metadata.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cache.matrices.size()));
  std::vector<float> buffer;
  for (const auto& [name, m] : cache.matrices) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    buffer.resize(static_cast<std::size_t>(m.size()));
    Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(buffer.data(), m.rows(),
                                                                                       m.cols()) = m.cast<float>();
    out.write(reinterpret_cast<const char*>(buffer.data()), static_cast<std::streamsize>(buffer.size() * 4));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

FeatureCache read_feature_cache(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw ValidationError(path.string() + ": not a feature cache");
  }
  const auto version = get_value<std::uint32_t>(in, path);
  if (version != kFeatureCacheVersion) {
    throw CompatibilityError(path.string() + ": unsupported feature cache version " + std::to_string(version));
  }
  FeatureCache cache;
  try {
    cache.metadata = nlohmann::json::parse(get_string(in, path, 1u << 24));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(path.string() + ": corrupt metadata: " + e.what());
  }
  const auto count = get_value<std::uint32_t>(in, path);
  std::vector<float> buffer;
  for (std::uint32_t k = 0; k < count; ++k) {
    auto name = get_string(in, path, 4096);
    const auto rows = get_value<std::uint64_t>(in, path);
    const auto cols = get_value<std::uint64_t>(in, path);
    if (rows > (1ull << 32) || cols > (1ull << 24)) throw ValidationError(path.string() + ": implausible shape");
    buffer.resize(rows * cols);
    if (!in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(buffer.size() * 4))) {
      throw ValidationError(path.string() + ": truncated feature cache");
    }
    Matrix m = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                   buffer.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols))
                   .cast<double>();
    cache.matrices.emplace_back(std::move(name), std::move(m));
  }
  return cache;
}

bool is_feature_cache(const fs::path& path) {
  if (!fs::is_regular_file(path)) return false;
  std::ifstream in(path, std::ios::binary);
  std::array<char, 8> magic{};
  return in.read(magic.data(), magic.size()) && magic == kMagic;
}

}  // namespace s2ig
