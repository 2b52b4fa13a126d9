#include "s2ig/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "s2ig/audio.hpp"
#include "s2ig/error.hpp"
#include "s2ig/hash.hpp"
#include "s2ig/image_io.hpp"
#include "s2ig/manifest.hpp"
#include "s2ig/rng.hpp"

namespace s2ig {
namespace fs = std::filesystem;

namespace {

constexpr std::array<double, kNumShapes> kShapeTonesHz{330.0, 495.0, 742.5, 1113.75};
constexpr double kColorToneLowHz = 1600.0;
constexpr double kColorToneHighHz = 6000.0;

std::array<std::uint8_t, 3> hue_to_rgb(double hue) {
  // Fully saturated HSV colour with value 0.95.
  const double h6 = hue * 6.0;
  const int sector = static_cast<int>(std::floor(h6)) % 6;
  const double f = h6 - std::floor(h6);
  const double v = 0.95;
  const double q = v * (1.0 - f);
  const double t = v * f;
  double r = 0;
  double g = 0;
  double b = 0;
  switch (sector) {
    case 0: r = v; g = t; b = 0; break;
    case 1: r = q; g = v; b = 0; break;
    case 2: r = 0; g = v; b = t; break;
    case 3: r = 0; g = q; b = v; break;
    case 4: r = t; g = 0; b = v; break;
    default: r = v; g = 0; b = q; break;
  }
  auto to8 = [](double x) { return static_cast<std::uint8_t>(std::lround(255.0 * x)); };
  return {to8(r), to8(g), to8(b)};
}

bool inside(Shape shape, double dx, double dy, double r) {
  switch (shape) {
    case Shape::kCircle:
      return dx * dx + dy * dy <= r * r;
    case Shape::kSquare:
      return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;
    case Shape::kDiamond:
      return std::abs(dx) + std::abs(dy) <= r;
    case Shape::kTriangle: {
      // Upward triangle with apex at (0, -r) and base at y = 0.7 r.
      if (dy > 0.7 * r || dy < -r) return false;
      const double half_width = (dy + r) / 1.7 * 0.9;
      return std::abs(dx) <= half_width;
    }
  }
  return false;
}

std::string record_stem(int class_id, int instance) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "c%03d_i%03d", class_id, instance);
  return buf;
}

}  // namespace

std::string to_string(Shape shape) {
  switch (shape) {
    case Shape::kCircle: return "circle";
    case Shape::kSquare: return "square";
    case Shape::kTriangle: return "triangle";
    case Shape::kDiamond: return "diamond";
  }
  return "unknown";
}

ClassAttributes class_attributes(int class_id, int num_classes) {
  if (num_classes < 1 || class_id < 0 || class_id >= num_classes) {
    throw ValidationError("class_attributes: class id out of range");
  }
  const int num_colors = (num_classes + kNumShapes - 1) / kNumShapes;
  ClassAttributes a;
  a.shape = static_cast<Shape>(class_id % kNumShapes);
  a.color_index = class_id / kNumShapes;
  a.rgb = hue_to_rgb(static_cast<double>(a.color_index) / num_colors);
  a.shape_tone_hz = kShapeTonesHz[static_cast<std::size_t>(class_id % kNumShapes)];
  a.color_tone_hz = num_colors == 1
                        ? kColorToneLowHz
                        : kColorToneLowHz * std::pow(kColorToneHighHz / kColorToneLowHz,
                                                     static_cast<double>(a.color_index) / (num_colors - 1));
  return a;
}

SyntheticRecordParams synthetic_record_params(std::uint64_t seed, int class_id, int instance) {
  Rng rng(derive_seed(seed, (static_cast<std::uint64_t>(class_id) << 20) | static_cast<std::uint64_t>(instance)));
  SyntheticRecordParams p;
  p.center_x = uniform_real(rng, 0.38, 0.62);
  p.center_y = uniform_real(rng, 0.38, 0.62);
  p.radius = uniform_real(rng, 0.22, 0.32);
  for (auto& j : p.color_jitter) j = uniform_real(rng, -0.08, 0.08);
  p.shape_onset_s = uniform_real(rng, 0.02, 0.08);
  p.segment_s = uniform_real(rng, 0.26, 0.32);
  p.color_onset_s = p.shape_onset_s + p.segment_s + uniform_real(rng, 0.02, 0.06);
  p.amplitude = uniform_real(rng, 0.3, 0.6);
  p.frequency_scale = uniform_real(rng, 0.985, 1.015);
  p.noise_seed = rng();
  return p;
}

std::vector<float> render_synthetic_audio(const ClassAttributes& attrs,
                                          const SyntheticRecordParams& params,
                                          const SyntheticCorpusOptions& options) {
  const int sr = options.sample_rate_hz;
  const auto n = static_cast<std::size_t>(std::lround(options.duration_s * sr));
  std::vector<float> wave(n);
  Rng noise(params.noise_seed);
  const double ramp = 0.01;
  auto envelope = [&](double t, double onset) {
    const double local = t - onset;
    if (local < 0.0 || local > params.segment_s) return 0.0;
    return std::min({1.0, local / ramp, (params.segment_s - local) / ramp});
  };
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    double s = 0.01 * standard_normal(noise);
    s += params.amplitude * envelope(t, params.shape_onset_s) *
         std::sin(2.0 * std::numbers::pi * attrs.shape_tone_hz * params.frequency_scale * t);
    s += params.amplitude * envelope(t, params.color_onset_s) *
         std::sin(2.0 * std::numbers::pi * attrs.color_tone_hz * params.frequency_scale * t);
    wave[i] = static_cast<float>(s);
  }
  return wave;
}

namespace {

torch::Tensor render_synthetic_image(const ClassAttributes& attrs, const SyntheticRecordParams& params,
                                     int size) {
  auto img = torch::empty({3, size, size}, torch::kFloat32);
  auto acc = img.accessor<float, 3>();
  Rng noise(params.noise_seed ^ 0xA5A5A5A5ULL);
  std::array<double, 3> color{};
  for (int c = 0; c < 3; ++c) {
    color[c] = std::clamp(attrs.rgb[c] / 127.5 - 1.0 + params.color_jitter[c], -1.0, 1.0);
  }
  const double cx = params.center_x * size;
  const double cy = params.center_y * size;
  const double r = params.radius * size;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const bool in = inside(attrs.shape, x + 0.5 - cx, y + 0.5 - cy, r);
      for (int c = 0; c < 3; ++c) {
        const double base = in ? color[c] : -0.75 + 0.1 * (static_cast<double>(y) / size);
        acc[c][y][x] = static_cast<float>(std::clamp(base + 0.04 * standard_normal(noise), -1.0, 1.0));
      }
    }
  }
  return img;
}

}  // namespace

fs::path make_synthetic_corpus(const SyntheticCorpusOptions& options) {
  if (options.num_classes < 2) {
    throw ValidationError("synthetic corpus needs at least 2 classes (got " +
                          std::to_string(options.num_classes) +
                          "); mismatched-class sampling is impossible otherwise");
  }
  if (options.images_per_class < 2) {
    throw ValidationError("synthetic corpus needs at least 2 images per class (got " +
                          std::to_string(options.images_per_class) + ")");
  }
  if (options.out_dir.empty()) throw ValidationError("synthetic corpus: empty output directory");

  std::error_code ec;
  fs::create_directories(options.out_dir / "images", ec);
  if (!ec) fs::create_directories(options.out_dir / "audio", ec);
  if (ec) throw IoError("cannot create " + options.out_dir.string() + ": " + ec.message());

  const int test_per_class = options.images_per_class / 5;
  std::vector<ManifestEntry> entries;
  for (int cls = 0; cls < options.num_classes; ++cls) {
    const ClassAttributes attrs = class_attributes(cls, options.num_classes);
    for (int i = 0; i < options.images_per_class; ++i) {
      const SyntheticRecordParams params = synthetic_record_params(options.seed, cls, i);
      const std::string stem = record_stem(cls, i);
      ManifestEntry e;
      e.image_path = fs::path("images") / (stem + ".png");
      e.audio_path = fs::path("audio") / (stem + ".wav");
      e.class_id = cls;
      e.caption_index = i % kCaptionsPerImage;
      e.split = i >= options.images_per_class - test_per_class ? Split::kTest : Split::kTrain;

      write_png(options.out_dir / e.image_path, render_synthetic_image(attrs, params, options.image_size));
      const auto wave = render_synthetic_audio(attrs, params, options);
      write_wav(options.out_dir / e.audio_path, wave, options.sample_rate_hz);
      entries.push_back(std::move(e));
    }
  }

  const fs::path manifest = options.out_dir / "manifest.tsv";
  write_manifest(manifest, entries, options.num_classes,
                 {"synthetic corpus seed=" + std::to_string(options.seed) +
                  " classes=" + std::to_string(options.num_classes) +
                  " per_class=" + std::to_string(options.images_per_class)});
  return manifest;
}

std::string corpus_hash(const fs::path& manifest) {
  Sha256 hash;
  hash.update_file(manifest);
  for (const auto& e : load_manifest(manifest)) {
    hash.update_file(e.image_path);
    hash.update_file(e.audio_path);
  }
  return hash.hex_digest();
}

}  // namespace s2ig
