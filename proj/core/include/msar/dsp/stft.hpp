#pragma once

#include <cstddef>
#include <vector>

#include "msar/dsp/waveform.hpp"
#include "msar/numerics/complex.hpp"

namespace msar::dsp {

using numerics::Complex;

struct StftParams {
  std::size_t win = 400;
  std::size_t hop = 160;
  std::size_t nfft = 512;
  std::size_t bins() const { return nfft / 2 + 1; }
};

// Complex STFT values indexed (t, f, c); the channel axis is innermost so the
// spatial vector x_{t,f} is contiguous.
class ComplexSpectrogram {
 public:
  ComplexSpectrogram() = default;
  ComplexSpectrogram(std::size_t frames, std::size_t channels, StftParams params = {});

  std::size_t frames() const { return frames_; }
  std::size_t bins() const { return bins_; }
  std::size_t channels() const { return channels_; }
  const StftParams& params() const { return params_; }

  Complex& at(std::size_t t, std::size_t f, std::size_t c) { return data_[(t * bins_ + f) * channels_ + c]; }
  const Complex& at(std::size_t t, std::size_t f, std::size_t c) const {
    return data_[(t * bins_ + f) * channels_ + c];
  }
  const Complex* vector(std::size_t t, std::size_t f) const { return data_.data() + (t * bins_ + f) * channels_; }
  std::vector<Complex>& data() { return data_; }
  const std::vector<Complex>& data() const { return data_; }

  ComplexSpectrogram select_channel(std::size_t c) const;

 private:
  std::size_t frames_ = 0;
  std::size_t bins_ = 0;
  std::size_t channels_ = 0;
  StftParams params_;
  std::vector<Complex> data_;
};

// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

std::size_t frame_count(std::size_t length, const StftParams& p);

// Frames are not centred: frame t covers samples [t*hop, t*hop + win).
ComplexSpectrogram stft(const Waveform& w, const StftParams& p = {});

inline constexpr double kIstftNormFloor = 0.1;

// Weighted overlap-add with window-square normalisation, floored at
// kIstftNormFloor times its maximum. The result has (T-1)*hop + win samples
// per channel; samples at least win from either end reconstruct exactly.
Waveform istft(const ComplexSpectrogram& s, int sample_rate = kSampleRate);

// Linear convolution of two real sequences (FFT based).
std::vector<double> convolve(std::span<const double> a, std::span<const double> b);

}  // namespace msar::dsp
