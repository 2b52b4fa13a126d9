#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace s2ig {

enum class Split { kTrain, kTest };

std::string to_string(Split split);

struct ManifestEntry {
  std::filesystem::path image_path;  // resolved, absolute or relative to cwd
  std::filesystem::path audio_path;
  int class_id = 0;
  int caption_index = 0;  // [0, 10)
  Split split = Split::kTrain;
};

inline constexpr int kCaptionsPerImage = 10;

// Loads and validates a tab-separated manifest:
//   image_path <TAB> audio_path <TAB> class_id <TAB> caption_index <TAB> split
// Lines starting with '#' are comments; a "# num_classes=N" comment declares
// the label space. Relative paths resolve against $S2IG_DATA_ROOT when set,
// otherwise against the manifest's directory.
//
// Malformed lines raise ParseError for the first offending line. Semantic
// problems (missing files, class ids out of range, train classes with fewer
// than two images) are collected and raised together as one ValidationError.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path,
                                         std::optional<int> num_classes = std::nullopt);

// Declared or inferred label space size of a manifest (max class id + 1 when
// undeclared).
int manifest_num_classes(const std::filesystem::path& path);

// Writes entries with paths relative to the manifest directory when possible.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries,
                    int num_classes, const std::vector<std::string>& header_comments = {});

std::vector<std::size_t> indices_of(const std::vector<ManifestEntry>& entries, Split split);

}  // namespace s2ig
