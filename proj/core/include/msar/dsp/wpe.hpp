#pragma once

#include <cstddef>
#include <vector>

#include "msar/dsp/stft.hpp"
#include "msar/numerics/complex.hpp"

namespace msar::dsp {

struct WpeParams {
  std::size_t taps = 10;
  std::size_t delay = 3;
  std::size_t iterations = 3;
};

inline constexpr double kWpeVarianceFloor = 1e-10;

// Per-frequency prediction filters, each [(C*taps) x C].
struct WpeFilters {
  WpeParams params;
  std::vector<numerics::ComplexMatrix> g;
};

struct WpeResult {
  ComplexSpectrogram output;
  WpeFilters filters;
  // Weighted prediction error sum |d|^2/lambda + log lambda over (t, f, c),
  // with lambda recomputed from the current estimate: entry 0 is the input,
  // entry k follows iteration k.
  std::vector<double> objective;
};

WpeResult wpe_detailed(const ComplexSpectrogram& s, const WpeParams& p = {});
ComplexSpectrogram wpe(const ComplexSpectrogram& s, const WpeParams& p = {});

// Subtracts the prediction of `s` made with fixed filters; linear in s.
ComplexSpectrogram apply_wpe_filters(const ComplexSpectrogram& s, const WpeFilters& filters);

double wpe_objective(const ComplexSpectrogram& d);

}  // namespace msar::dsp
