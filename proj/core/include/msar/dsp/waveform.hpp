#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace msar::dsp {

inline constexpr int kSampleRate = 16000;

// Multichannel real signal, stored channel-major.
class Waveform {
 public:
  Waveform() = default;
  Waveform(std::size_t channels, std::size_t length, int sample_rate = kSampleRate);
  static Waveform mono(std::vector<double> samples, int sample_rate = kSampleRate);

  int sample_rate() const { return sample_rate_; }
  std::size_t channels() const { return channels_; }
  std::size_t length() const { return length_; }
  bool empty() const { return length_ == 0 || channels_ == 0; }

  std::span<double> channel(std::size_t c) { return {samples_.data() + c * length_, length_}; }
  std::span<const double> channel(std::size_t c) const { return {samples_.data() + c * length_, length_}; }
  double& at(std::size_t c, std::size_t n) { return samples_[c * length_ + n]; }
  double at(std::size_t c, std::size_t n) const { return samples_[c * length_ + n]; }
  std::vector<double>& samples() { return samples_; }
  const std::vector<double>& samples() const { return samples_; }

  Waveform select_channel(std::size_t c) const;
  // Zero-pads or truncates every channel to `length`.
  Waveform resized(std::size_t length) const;
  // Stacks mono (or multichannel) signals along the channel axis; lengths must agree.
  static Waveform stack(std::span<const Waveform> parts);

 private:
  int sample_rate_ = kSampleRate;
  std::size_t channels_ = 0;
  std::size_t length_ = 0;
  std::vector<double> samples_;
};

// Mean power over all samples of all channels.
double power(const Waveform& w);

// Reads PCM16, PCM32, float32 or float64 WAV (including WAVE_FORMAT_EXTENSIBLE).
Waveform read_wav(const std::filesystem::path& path);
// Writes IEEE float32 WAV.
void write_wav(const std::filesystem::path& path, const Waveform& w);

}  // namespace msar::dsp
