#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace s2ig {

enum class Shape { kCircle, kSquare, kTriangle, kDiamond };

inline constexpr int kNumShapes = 4;

std::string to_string(Shape shape);

// Visual and acoustic attributes of one synthetic class. Class ids map
// one-to-one onto (shape, color) and the two tone frequencies are functions
// of shape and color respectively, so the spoken "description" carries the
// same information as the picture.
struct ClassAttributes {
  Shape shape = Shape::kCircle;
  int color_index = 0;
  std::array<std::uint8_t, 3> rgb{};
  double shape_tone_hz = 0.0;
  double color_tone_hz = 0.0;

  bool operator==(const ClassAttributes&) const = default;
};

ClassAttributes class_attributes(int class_id, int num_classes);

struct SyntheticCorpusOptions {
  std::uint64_t seed = 7;
  int num_classes = 8;
  int images_per_class = 10;
  std::filesystem::path out_dir;
  int image_size = 256;
  int sample_rate_hz = 16000;
  double duration_s = 0.8;
};

// Per-record random realisation on top of the class attributes.
struct SyntheticRecordParams {
  double center_x = 0.5;  // fraction of the image
  double center_y = 0.5;
  double radius = 0.3;
  std::array<double, 3> color_jitter{};
  double shape_onset_s = 0.0;
  double color_onset_s = 0.0;
  double segment_s = 0.0;
  double amplitude = 0.5;
  double frequency_scale = 1.0;
  std::uint64_t noise_seed = 0;
};

SyntheticRecordParams synthetic_record_params(std::uint64_t seed, int class_id, int instance);

std::vector<float> render_synthetic_audio(const ClassAttributes& attrs,
                                          const SyntheticRecordParams& params,
                                          const SyntheticCorpusOptions& options);

// Writes images/, audio/ and manifest.tsv under out_dir and returns the
// manifest path. Output bytes are a pure function of the options.
// Per class, floor(images_per_class / 5) records go to the test split.
std::filesystem::path make_synthetic_corpus(const SyntheticCorpusOptions& options);

// SHA-256 over the manifest and every file it references, in manifest order.
std::string corpus_hash(const std::filesystem::path& manifest);

}  // namespace s2ig
