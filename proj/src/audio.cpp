#include "s2ig/audio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>

#include "s2ig/error.hpp"

namespace s2ig {
namespace {

std::uint32_t read_u32(const char* p) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(p[0])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(p[1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(p[2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(p[3])) << 24;
}

std::uint16_t read_u16(const char* p) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(p[0]) |
                                    static_cast<unsigned char>(p[1]) << 8);
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace

void FrontendConfig::validate() const {
  if (!(frame_length_ms > 0.0) || !(frame_shift_ms > 0.0)) {
    throw ValidationError("frontend: frame length and shift must be positive");
  }
  if (num_mel < 1) throw ValidationError("frontend: num_mel must be >= 1");
  if (sample_rate_hz <= 0) throw ValidationError("frontend: sample_rate_hz must be positive");
  if (!(log_floor > 0.0)) throw ValidationError("frontend: log floor must be positive");
}

void to_json(nlohmann::json& j, const FrontendConfig& c) {
  j = nlohmann::json{{"frame_length_ms", c.frame_length_ms}, {"frame_shift_ms", c.frame_shift_ms},
                     {"num_mel", c.num_mel},                 {"sample_rate_hz", c.sample_rate_hz},
                     {"log_floor", c.log_floor},             {"normalize", c.normalize}};
}

void from_json(const nlohmann::json& j, FrontendConfig& c) {
  j.at("frame_length_ms").get_to(c.frame_length_ms);
  j.at("frame_shift_ms").get_to(c.frame_shift_ms);
  j.at("num_mel").get_to(c.num_mel);
  j.at("sample_rate_hz").get_to(c.sample_rate_hz);
  j.at("log_floor").get_to(c.log_floor);
  j.at("normalize").get_to(c.normalize);
}

int FrontendConfig::window_samples(int sample_rate) const {
  return static_cast<int>(std::lround(sample_rate * frame_length_ms / 1000.0));
}

int FrontendConfig::shift_samples(int sample_rate) const {
  return static_cast<int>(std::lround(sample_rate * frame_shift_ms / 1000.0));
}

int FrontendConfig::fft_size(int sample_rate) const {
  return static_cast<int>(std::bit_ceil(static_cast<unsigned>(window_samples(sample_rate))));
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open audio file " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 12 || data.compare(0, 4, "RIFF") != 0 || data.compare(8, 4, "WAVE") != 0) {
    throw ValidationError(path.string() + ": not a RIFF/WAVE file");
  }

  int channels = 0;
  int sample_rate = 0;
  int bits = 0;
  std::uint16_t format = 0;
  const char* pcm = nullptr;
  std::size_t pcm_bytes = 0;
  std::size_t pos = 12;
  while (pos + 8 <= data.size()) {
    const std::string id = data.substr(pos, 4);
    const std::size_t size = read_u32(&data[pos + 4]);
    const std::size_t body = pos + 8;
    if (body + size > data.size()) {
      if (id != "data") break;
    }
    if (id == "fmt " && size >= 16) {
      format = read_u16(&data[body]);
      channels = read_u16(&data[body + 2]);
      sample_rate = static_cast<int>(read_u32(&data[body + 4]));
      bits = read_u16(&data[body + 14]);
    } else if (id == "data") {
      pcm = &data[body];
      pcm_bytes = std::min(size, data.size() - body);
    }
    pos = body + size + (size & 1U);
  }
  if (format != 1 || bits != 16) {
    throw ValidationError(path.string() + ": only 16-bit PCM WAV is supported");
  }
  if (channels < 1 || sample_rate <= 0 || pcm == nullptr) {
    throw ValidationError(path.string() + ": missing fmt or data chunk");
  }

  const std::size_t frames = pcm_bytes / (2 * static_cast<std::size_t>(channels));
  Waveform wave;
  wave.sample_rate_hz = sample_rate;
  wave.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const auto raw = static_cast<std::int16_t>(read_u16(pcm + 2 * (i * channels + c)));
      acc += raw / 32768.0;
    }
    wave.samples[i] = static_cast<float>(acc / channels);
  }
  return wave;
}

void write_wav(const std::filesystem::path& path, std::span<const float> samples,
               int sample_rate_hz) {
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(sample_rate_hz));
  put_u32(out, static_cast<std::uint32_t>(sample_rate_hz) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (float s : samples) {
    const double clipped = std::clamp(static_cast<double>(s), -1.0, 32767.0 / 32768.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(clipped * 32768.0))));
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot write " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("short write to " + path.string());
}

std::vector<float> resample(std::span<const float> samples, int from_hz, int to_hz) {
  if (from_hz <= 0 || to_hz <= 0) throw ValidationError("resample: rates must be positive");
  if (from_hz == to_hz) return {samples.begin(), samples.end()};

  constexpr int kZeroCrossings = 16;
  const double ratio = static_cast<double>(to_hz) / from_hz;
  const double cutoff = std::min(1.0, ratio);
  const double half_width = kZeroCrossings / cutoff;
  const auto out_len = static_cast<std::size_t>(std::floor(samples.size() * ratio));
  const auto n = static_cast<std::int64_t>(samples.size());

  std::vector<float> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double x = static_cast<double>(i) / ratio;
    const auto lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(x - half_width)));
    const auto hi = std::min<std::int64_t>(n - 1, static_cast<std::int64_t>(std::floor(x + half_width)));
    double acc = 0.0;
    for (std::int64_t k = lo; k <= hi; ++k) {
      const double d = x - static_cast<double>(k);
      const double window = 0.5 + 0.5 * std::cos(std::numbers::pi * d / half_width);
      acc += samples[static_cast<std::size_t>(k)] * cutoff * sinc(cutoff * d) * window;
    }
    out[i] = static_cast<float>(acc);
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank::MelFilterbank(int num_mel, int fft_size, int sample_rate_hz) : num_mel_(num_mel) {
  if (num_mel < 1 || fft_size < 2 || sample_rate_hz <= 0) {
    throw ValidationError("mel filterbank: invalid dimensions");
  }
  const int bins = fft_size / 2 + 1;
  const double nyquist = sample_rate_hz / 2.0;
  const double mel_max = hz_to_mel(nyquist);

  std::vector<double> edges(static_cast<std::size_t>(num_mel) + 2);
  for (std::size_t m = 0; m < edges.size(); ++m) {
    edges[m] = mel_to_hz(mel_max * static_cast<double>(m) / static_cast<double>(num_mel + 1));
  }

  weights_ = torch::zeros({num_mel, bins}, torch::kFloat64);
  auto w = weights_.accessor<double, 2>();
  for (int m = 0; m < num_mel; ++m) {
    const double left = edges[m];
    const double center = edges[m + 1];
    const double right = edges[m + 2];
    centers_hz_.push_back(center);
    double row_sum = 0.0;
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate_hz / fft_size;
      const double rise = (f - left) / (center - left);
      const double fall = (right - f) / (right - center);
      const double v = std::max(0.0, std::min(rise, fall));
      w[m][k] = v;
      row_sum += v;
    }
    if (!(row_sum > 0.0)) {
      throw ValidationError("mel filterbank: filter " + std::to_string(m) +
                            " covers no FFT bin; reduce num_mel or lengthen the window");
    }
  }
}

int64_t num_frames_for(int64_t num_samples, const FrontendConfig& config, int sample_rate_hz) {
  const int window = config.window_samples(sample_rate_hz);
  const int shift = config.shift_samples(sample_rate_hz);
  if (num_samples < window) return 0;
  return (num_samples - window) / shift + 1;
}

Spectrogram compute_log_mel(std::span<const float> waveform, int sample_rate_hz,
                            const FrontendConfig& config) {
  config.validate();
  if (sample_rate_hz <= 0) throw ValidationError("log-mel: sample rate must be positive");
  const int window = config.window_samples(sample_rate_hz);
  const int shift = config.shift_samples(sample_rate_hz);
  if (window < 2 || shift < 1) throw ValidationError("log-mel: frame parameters too small for sample rate");
  if (static_cast<int64_t>(waveform.size()) < window) {
    throw ValidationError("log-mel: waveform of " + std::to_string(waveform.size()) +
                          " samples is shorter than one " + std::to_string(window) + "-sample frame");
  }
  for (float s : waveform) {
    if (!std::isfinite(s)) throw ValidationError("log-mel: waveform contains non-finite samples");
  }

  const int fft = config.fft_size(sample_rate_hz);
  const MelFilterbank bank(config.num_mel, fft, sample_rate_hz);

  auto signal = torch::from_blob(const_cast<float*>(waveform.data()),
                                 {static_cast<int64_t>(waveform.size())}, torch::kFloat32)
                    .to(torch::kFloat64);
  auto frames = signal.unfold(0, window, shift);  // [F, window]
  frames = frames * torch::hamming_window(window, /*periodic=*/false, torch::kFloat64);
  auto power = torch::fft::rfft(frames, fft, /*dim=*/-1).abs().pow(2);  // [F, fft/2+1]
  auto mel = torch::matmul(power, bank.weights().t());
  auto log_mel = torch::log(mel + config.log_floor);

  if (config.normalize) {
    const auto mean = log_mel.mean(0, /*keepdim=*/true);
    const auto std = log_mel.std(0, /*unbiased=*/false, /*keepdim=*/true).clamp_min(1e-8);
    log_mel = (log_mel - mean) / std;
  }

  Spectrogram spec;
  spec.frames = log_mel.to(torch::kFloat32).contiguous();
  spec.sample_rate_hz = sample_rate_hz;
  spec.frame_length_ms = config.frame_length_ms;
  spec.frame_shift_ms = config.frame_shift_ms;
  return spec;
}

Spectrogram load_spectrogram(const std::filesystem::path& wav, const FrontendConfig& config) {
  Waveform wave = read_wav(wav);
  if (wave.sample_rate_hz != config.sample_rate_hz) {
    wave.samples = resample(wave.samples, wave.sample_rate_hz, config.sample_rate_hz);
  }
  return compute_log_mel(wave.samples, config.sample_rate_hz, config);
}

std::pair<torch::Tensor, torch::Tensor> pad_spectrograms(std::span<const Spectrogram* const> items,
                                                         double log_floor) {
  if (items.empty()) throw ValidationError("pad_spectrograms: empty batch");
  int64_t max_len = 0;
  const int64_t mel = items.front()->num_mel();
  for (const Spectrogram* s : items) {
    if (s->num_mel() != mel) throw ValidationError("pad_spectrograms: inconsistent mel bins");
    max_len = std::max(max_len, s->num_frames());
  }
  auto batch = torch::full({static_cast<int64_t>(items.size()), max_len, mel},
                           std::log(log_floor), torch::kFloat32);
  auto lengths = torch::empty({static_cast<int64_t>(items.size())}, torch::kInt64);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto len = items[i]->num_frames();
    batch[static_cast<int64_t>(i)].narrow(0, 0, len).copy_(items[i]->frames);
    lengths[static_cast<int64_t>(i)] = len;
  }
  return {batch, lengths};
}

}  // namespace s2ig
