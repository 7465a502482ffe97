#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "msar/dsp/stft.hpp"
#include "msar/numerics/tensor.hpp"

namespace msar::dsp {

using numerics::Tensor;

inline constexpr std::size_t kMelBands = 80;
inline constexpr double kLogFloor = 1e-10;

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular HTK-mel filterbank spanning 0 Hz to Nyquist, shaped [bins x n_mels].
Tensor mel_filterbank(std::size_t n_mels = kMelBands, std::size_t nfft = 512, int sample_rate = kSampleRate);

// |s| of a single channel as [T x F].
Tensor magnitude(const ComplexSpectrogram& s, std::size_t channel = 0);

// log(mag . fb + 1e-10); differentiable in `mag`.
Tensor log_mel(const Tensor& mag, const Tensor& fb);

struct GlobalStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  bool empty() const { return mean.empty(); }
};

// Per-dimension mean and population standard deviation over all rows of all
// feature matrices.
GlobalStats compute_global_stats(std::span<const Tensor> features);

// (x - mean) / stddev per column; differentiable in x. Throws
// DegenerateStatsError when any stddev is zero.
Tensor apply_gmvn(const Tensor& x, const GlobalStats& stats);

// Complete LMF feature extraction for one channel of s.
Tensor log_mel_gmvn(const ComplexSpectrogram& s, const GlobalStats& stats, std::size_t n_mels = kMelBands);

}  // namespace msar::dsp
