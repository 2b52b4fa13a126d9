#include "testing.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <vector>

#include "s2ig/audio.hpp"
#include "s2ig/error.hpp"
#include "test_util.hpp"

using namespace s2ig;

namespace {

std::vector<float> tone(double hz, double seconds, int rate, double amplitude = 0.5) {
  std::vector<float> out(static_cast<std::size_t>(seconds * rate));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(amplitude * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate));
  }
  return out;
}

}  // namespace

TEST_CASE("one second at 16 kHz gives 98 frames of 40 bins") {
  FrontendConfig config;
  const std::vector<float> wave(16000, 0.1f);
  const auto spec = compute_log_mel(wave, 16000, config);
  CHECK(spec.num_frames() == (16000 - 400) / 160 + 1);
  CHECK(spec.num_frames() == 98);
  CHECK(spec.num_mel() == 40);
}

TEST_CASE("frame count follows floor((n - window) / shift) + 1 for every length") {
  FrontendConfig config;
  for (int n = 400; n < 2400; n += 37) {
    const std::vector<float> wave(static_cast<std::size_t>(n), 0.0f);
    const auto spec = compute_log_mel(wave, 16000, config);
    CHECK(spec.num_frames() == (n - 400) / 160 + 1);
    CHECK(num_frames_for(n, config, 16000) == (n - 400) / 160 + 1);
  }
}

TEST_CASE("silence sits exactly on the log floor") {
  FrontendConfig config;
  const std::vector<float> wave(8000, 0.0f);
  const auto spec = compute_log_mel(wave, 16000, config);
  const auto expected = static_cast<float>(std::log(config.log_floor));
  CHECK(torch::allclose(spec.frames, torch::full_like(spec.frames, expected), 0.0, 1e-6));
}

TEST_CASE("a pure 1 kHz tone peaks in the filter centred nearest 1 kHz") {
  FrontendConfig config;
  const auto spec = compute_log_mel(tone(1000.0, 0.5, 16000), 16000, config);
  MelFilterbank bank(config.num_mel, config.fft_size(16000), 16000);
  const auto& centers = bank.center_frequencies_hz();
  std::size_t nearest = 0;
  for (std::size_t i = 1; i < centers.size(); ++i) {
    if (std::abs(centers[i] - 1000.0) < std::abs(centers[nearest] - 1000.0)) nearest = i;
  }
  const auto argmax = spec.frames.argmax(1);
  CHECK(torch::all(argmax == static_cast<int64_t>(nearest)).item<bool>());
}

TEST_CASE("Mel filters are positive, contiguous and span 0 Hz to Nyquist") {
  MelFilterbank bank(40, 512, 16000);
  const auto w = bank.weights();
  for (int64_t m = 0; m < w.size(0); ++m) {
    const auto row = w[m];
    CHECK(row.sum().item<double>() > 0.0);
    const auto nz = torch::nonzero(row > 0).flatten();
    const auto first = nz.min().item<int64_t>();
    const auto last = nz.max().item<int64_t>();
    CHECK(nz.size(0) == last - first + 1);
  }
  CHECK(hz_to_mel(0.0) == doctest::Approx(0.0));
  CHECK(bank.center_frequencies_hz().front() > 0.0);
  CHECK(bank.center_frequencies_hz().back() < 8000.0);
  // First filter starts at DC, last filter ends at Nyquist.
  const auto coverage = w.sum(0);
  CHECK(coverage[1].item<double>() > 0.0);
  CHECK(coverage[w.size(1) - 2].item<double>() > 0.0);
}

TEST_CASE("HTK Mel formula") {
  CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
  CHECK(mel_to_hz(hz_to_mel(1234.5)) == doctest::Approx(1234.5));
}

TEST_CASE("too-short and non-finite waveforms are rejected") {
  FrontendConfig config;
  const std::vector<float> short_wave(399, 0.0f);
  CHECK_THROWS_AS(compute_log_mel(short_wave, 16000, config), ValidationError);
  std::vector<float> bad(1600, 0.0f);
  bad[5] = std::nanf("");
  CHECK_THROWS_AS(compute_log_mel(bad, 16000, config), ValidationError);
  CHECK_THROWS_AS(compute_log_mel(std::vector<float>(1600, 0.0f), 0, config), ValidationError);
}

TEST_CASE("normalisation gives zero-mean unit-variance bins") {
  FrontendConfig config;
  config.normalize = true;
  auto wave = tone(440.0, 0.6, 16000);
  for (std::size_t i = 0; i < wave.size(); ++i) wave[i] += 0.05f * static_cast<float>(std::sin(0.37 * i));
  const auto spec = compute_log_mel(wave, 16000, config);
  CHECK(spec.frames.mean(0).abs().max().item<double>() < 1e-4);
}

TEST_CASE("WAV round trip and resampling") {
  TempDir tmp;
  const auto wave = tone(300.0, 0.25, 8000);
  write_wav(tmp.path() / "a.wav", wave, 8000);
  const auto back = read_wav(tmp.path() / "a.wav");
  REQUIRE(back.samples.size() == wave.size());
  CHECK(back.sample_rate_hz == 8000);
  for (std::size_t i = 0; i < wave.size(); ++i) CHECK(back.samples[i] == doctest::Approx(wave[i]).epsilon(1e-3));

  const auto up = resample(wave, 8000, 16000);
  CHECK(up.size() == 2 * wave.size());
  // A 300 Hz tone survives resampling: compare the middle against the ideal.
  const auto ideal = tone(300.0, 0.25, 16000);
  double err = 0.0;
  for (std::size_t i = 200; i + 200 < up.size(); ++i) err = std::max(err, std::abs(double(up[i]) - ideal[i]));
  CHECK(err < 0.02);

  FrontendConfig config;
  const auto spec = load_spectrogram(tmp.path() / "a.wav", config);
  CHECK(spec.sample_rate_hz == 16000);
  CHECK(spec.num_frames() == num_frames_for(static_cast<int64_t>(up.size()), config, 16000));
}

TEST_CASE("padding fills with the log floor and records true lengths") {
  FrontendConfig config;
  const auto a = compute_log_mel(tone(500.0, 0.3, 16000), 16000, config);
  const auto b = compute_log_mel(tone(700.0, 0.5, 16000), 16000, config);
  const Spectrogram* items[] = {&a, &b};
  const auto [frames, lengths] = pad_spectrograms(items, config.log_floor);
  CHECK(frames.size(1) == b.num_frames());
  CHECK(lengths[0].item<int64_t>() == a.num_frames());
  const auto tail = frames[0].slice(0, a.num_frames());
  CHECK(torch::allclose(tail, torch::full_like(tail, static_cast<float>(std::log(config.log_floor)))));
  CHECK(torch::equal(frames[0].slice(0, 0, a.num_frames()), a.frames));
}
