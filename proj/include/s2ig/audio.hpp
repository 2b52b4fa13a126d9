#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <span>
#include <vector>

#include "s2ig/json.hpp"

namespace s2ig {

// Frame and filterbank parameters of the log-Mel frontend.
struct FrontendConfig {
  double frame_length_ms = 25.0;
  double frame_shift_ms = 10.0;
  int num_mel = 40;
  int sample_rate_hz = 16000;
  // Added to Mel energies before the logarithm.
  double log_floor = 1e-10;
  // Per-utterance mean/variance normalisation of every Mel bin.
  bool normalize = false;

  void validate() const;
  int window_samples(int sample_rate) const;
  int shift_samples(int sample_rate) const;
  // Smallest power of two not below the window length.
  int fft_size(int sample_rate) const;
};

void to_json(nlohmann::json& j, const FrontendConfig& c);
void from_json(const nlohmann::json& j, FrontendConfig& c);

struct Spectrogram {
  torch::Tensor frames;  // [num_frames, num_mel], float32
  int sample_rate_hz = 0;
  double frame_length_ms = 25.0;
  double frame_shift_ms = 10.0;

  int64_t num_frames() const { return frames.size(0); }
  int64_t num_mel() const { return frames.size(1); }
};

struct Waveform {
  std::vector<float> samples;  // mono, [-1, 1]
  int sample_rate_hz = 0;
};

// 16-bit PCM mono WAV. Multi-channel files are down-mixed on read.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, std::span<const float> samples,
               int sample_rate_hz);

// Band-limited resampling with a Hann-windowed sinc kernel.
std::vector<float> resample(std::span<const float> samples, int from_hz, int to_hz);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filters equally spaced on the HTK Mel scale between 0 Hz and
// Nyquist, applied to a power spectrum of fft_size / 2 + 1 bins.
class MelFilterbank {
 public:
  MelFilterbank(int num_mel, int fft_size, int sample_rate_hz);

  const torch::Tensor& weights() const { return weights_; }  // [num_mel, bins], double
  const std::vector<double>& center_frequencies_hz() const { return centers_hz_; }
  int num_mel() const { return num_mel_; }

 private:
  int num_mel_;
  torch::Tensor weights_;
  std::vector<double> centers_hz_;
};

int64_t num_frames_for(int64_t num_samples, const FrontendConfig& config, int sample_rate_hz);

Spectrogram compute_log_mel(std::span<const float> waveform, int sample_rate_hz,
                            const FrontendConfig& config);

// Reads a WAV file, resamples to config.sample_rate_hz and computes the
// spectrogram.
Spectrogram load_spectrogram(const std::filesystem::path& wav, const FrontendConfig& config);

// Pads spectrograms to the longest one with log(floor). Returns the padded
// batch [B, T_max, num_mel] and the true lengths [B] (int64).
std::pair<torch::Tensor, torch::Tensor> pad_spectrograms(std::span<const Spectrogram* const> items,
                                                         double log_floor);

}  // namespace s2ig
