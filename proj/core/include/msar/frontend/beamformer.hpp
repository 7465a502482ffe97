#pragma once

#include <cstddef>
#include <vector>

#include "msar/dsp/stft.hpp"
#include "msar/numerics/complex.hpp"
#include "msar/numerics/tensor.hpp"

namespace msar::frontend {

using dsp::ComplexSpectrogram;
using numerics::Complex;
using numerics::ComplexMatrix;
using numerics::Tensor;

// Time-frequency masks m_{t,f,c}^j in [0, 1] for sources j = 0..J, where
// source 0 is the noise.
class MaskSet {
 public:
  MaskSet() = default;
  MaskSet(std::size_t frames, std::size_t bins, std::size_t channels, std::size_t sources);

  std::size_t frames() const { return frames_; }
  std::size_t bins() const { return bins_; }
  std::size_t channels() const { return channels_; }
  std::size_t sources() const { return sources_; }
  std::size_t speakers() const { return sources_ - 1; }

  double& at(std::size_t t, std::size_t f, std::size_t c, std::size_t j) {
    return values_[((t * bins_ + f) * channels_ + c) * sources_ + j];
  }
  double at(std::size_t t, std::size_t f, std::size_t c, std::size_t j) const {
    return values_[((t * bins_ + f) * channels_ + c) * sources_ + j];
  }
  const std::vector<double>& values() const { return values_; }

  // Channel-averaged mask of source j as [T x F].
  Tensor channel_mean(std::size_t j) const;

 private:
  std::size_t frames_ = 0, bins_ = 0, channels_ = 0, sources_ = 0;
  std::vector<double> values_;
};

// Spatial covariance matrices Phi^j(f) for every source.
struct PsdSet {
  std::size_t bins = 0;
  std::size_t channels = 0;
  std::vector<std::vector<ComplexMatrix>> phi;  // [source][bin]
  std::size_t sources() const { return phi.size(); }
};

// Filters g^j(f), [speaker][bin] -> length-C vector; speaker index 0 is the
// first speaker (source 1).
struct BeamformerFilters {
  std::vector<std::vector<std::vector<Complex>>> g;
};

// Binary masks marking, per channel, the dominant component at each (t, f).
// components[0] is the noise, components[j] speaker j; all share one shape.
MaskSet oracle_masks(const std::vector<ComplexSpectrogram>& components);

inline constexpr double kMaskRescue = 1e-10;
inline constexpr double kTraceFallback = 1e-12;

// Phi^j(f) = sum_t m x x^H / sum_t m with the channel-averaged mask. A source
// whose mask sums to zero in a bin gets the diagonal PSD kMaskRescue * p * I
// there, p being the bin's mean channel power.
PsdSet estimate_psd(const ComplexSpectrogram& x, const MaskSet& m);

// MVDR filter of speaker j (1..J) against the sum of all other sources,
// including noise, with reference weights u.
std::vector<std::vector<Complex>> mvdr_filter(const PsdSet& psds, std::size_t j, const std::vector<double>& u);

// s^j_{t,f} = g(f)^H x_{t,f}.
ComplexSpectrogram beamform(const ComplexSpectrogram& x, const std::vector<std::vector<Complex>>& g);

// --- differentiable forms ------------------------------------------------
//
// Complex tensors carry a trailing axis of size 2 (real, imaginary).

// mask [T x F] -> Phi [F x C x C x 2]; differentiable in the mask.
Tensor psd_op(const Tensor& mask, const ComplexSpectrogram& x);
// Phi, N [F x C x C x 2], u [C] -> g [F x C x 2]; differentiable in all three.
Tensor mvdr_op(const Tensor& target, const Tensor& interference, const Tensor& u);
// g [F x C x 2] -> s [T x F x 2]; differentiable in g.
Tensor beamform_op(const Tensor& g, const ComplexSpectrogram& x);
// [.. x 2] -> [..] magnitude.
Tensor complex_abs(const Tensor& z);
// Phi [F x C x C x 2] -> real diagonal [C x F].
Tensor psd_diagonal(const Tensor& phi);

ComplexMatrix psd_matrix(const Tensor& phi, std::size_t f);
ComplexSpectrogram to_spectrogram(const Tensor& s, const dsp::StftParams& params);

}  // namespace msar::frontend
