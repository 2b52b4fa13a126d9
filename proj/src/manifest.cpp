#include "s2ig/manifest.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "s2ig/error.hpp"

namespace s2ig {
namespace fs = std::filesystem;

namespace {

constexpr std::string_view kNumClassesDirective = "num_classes=";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::optional<int> parse_int(const std::string& text) {
  int value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) return std::nullopt;
  return value;
}

fs::path data_root_for(const fs::path& manifest) {
  if (const char* root = std::getenv("S2IG_DATA_ROOT"); root != nullptr && *root != '\0') {
    return fs::path(root);
  }
  return manifest.parent_path();
}

fs::path resolve(const fs::path& root, const std::string& raw) {
  fs::path p(raw);
  return p.is_absolute() ? p : root / p;
}

struct ParsedManifest {
  std::vector<ManifestEntry> entries;
  std::vector<int> lines;
  std::optional<int> declared_classes;
};

ParsedManifest parse(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("manifest not found: " + path.string());
  const fs::path root = data_root_for(path);

  ParsedManifest out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      std::string body = line.substr(1);
      body.erase(0, body.find_first_not_of(' '));
      if (body.starts_with(kNumClassesDirective)) {
        const auto n = parse_int(body.substr(kNumClassesDirective.size()));
        if (!n || *n < 1) throw ParseError(path, line_no, "invalid num_classes directive");
        out.declared_classes = *n;
      }
      continue;
    }
    const auto fields = split_tabs(line);
    if (fields.size() != 5) {
      throw ParseError(path, line_no,
                       "expected 5 tab-separated fields, found " + std::to_string(fields.size()));
    }
    ManifestEntry entry;
    if (fields[0].empty() || fields[1].empty()) throw ParseError(path, line_no, "empty path field");
    entry.image_path = resolve(root, fields[0]);
    entry.audio_path = resolve(root, fields[1]);
    const auto class_id = parse_int(fields[2]);
    if (!class_id) throw ParseError(path, line_no, "class_id is not an integer: '" + fields[2] + "'");
    entry.class_id = *class_id;
    const auto caption = parse_int(fields[3]);
    if (!caption) throw ParseError(path, line_no, "caption_index is not an integer: '" + fields[3] + "'");
    entry.caption_index = *caption;
    if (fields[4] == "train") {
      entry.split = Split::kTrain;
    } else if (fields[4] == "test") {
      entry.split = Split::kTest;
    } else {
      throw ParseError(path, line_no, "split must be 'train' or 'test', got '" + fields[4] + "'");
    }
    out.entries.push_back(std::move(entry));
    out.lines.push_back(line_no);
  }
  return out;
}

}  // namespace

std::string to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

std::vector<ManifestEntry> load_manifest(const fs::path& path, std::optional<int> num_classes) {
  ParsedManifest parsed = parse(path);
  if (!num_classes) num_classes = parsed.declared_classes;

  std::vector<std::string> problems;
  std::map<int, int> train_counts;
  for (std::size_t i = 0; i < parsed.entries.size(); ++i) {
    const auto& e = parsed.entries[i];
    const std::string where = "line " + std::to_string(parsed.lines[i]) + ": ";
    if (e.class_id < 0 || (num_classes && e.class_id >= *num_classes)) {
      problems.push_back(where + "class_id " + std::to_string(e.class_id) + " outside [0, " +
                         (num_classes ? std::to_string(*num_classes) : std::string("N")) + ")");
    }
    if (e.caption_index < 0 || e.caption_index >= kCaptionsPerImage) {
      problems.push_back(where + "caption_index " + std::to_string(e.caption_index) +
                         " outside [0, " + std::to_string(kCaptionsPerImage) + ")");
    }
    if (!fs::is_regular_file(e.image_path)) {
      problems.push_back(where + "image not found: " + e.image_path.string());
    }
    if (!fs::is_regular_file(e.audio_path)) {
      problems.push_back(where + "audio not found: " + e.audio_path.string());
    }
    if (e.split == Split::kTrain) ++train_counts[e.class_id];
  }
  for (const auto& [cls, count] : train_counts) {
    if (count < 2) {
      problems.push_back("class " + std::to_string(cls) + " has " + std::to_string(count) +
                         " train image(s); at least 2 are required");
    }
  }
  if (!problems.empty()) {
    std::ostringstream msg;
    msg << path.string() << ": " << problems.size() << " invalid entr"
        << (problems.size() == 1 ? "y" : "ies");
    for (const auto& p : problems) msg << "\n  " << p;
    throw ValidationError(msg.str());
  }
  return std::move(parsed.entries);
}

int manifest_num_classes(const fs::path& path) {
  const ParsedManifest parsed = parse(path);
  if (parsed.declared_classes) return *parsed.declared_classes;
  int max_class = -1;
  for (const auto& e : parsed.entries) max_class = std::max(max_class, e.class_id);
  return max_class + 1;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries, int num_classes,
                    const std::vector<std::string>& header_comments) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  const fs::path base = path.parent_path();
  auto rel = [&](const fs::path& p) {
    if (p.is_relative()) return p.generic_string();
    const fs::path r = p.lexically_relative(base);
    return r.empty() ? p.generic_string() : r.generic_string();
  };
  for (const auto& c : header_comments) out << "# " << c << '\n';
  out << "# " << kNumClassesDirective << num_classes << '\n';
  for (const auto& e : entries) {
    out << rel(e.image_path) << '\t' << rel(e.audio_path) << '\t' << e.class_id << '\t'
        << e.caption_index << '\t' << to_string(e.split) << '\n';
  }
  if (!out) throw IoError("short write to manifest " + path.string());
}

std::vector<std::size_t> indices_of(const std::vector<ManifestEntry>& entries, Split split) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].split == split) idx.push_back(i);
  }
  return idx;
}

}  // namespace s2ig
