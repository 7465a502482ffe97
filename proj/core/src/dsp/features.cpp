#include "msar/dsp/features.hpp"

#include <cmath>

#include "msar/error.hpp"
#include "msar/numerics/ops.hpp"

namespace msar::dsp {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Tensor mel_filterbank(std::size_t n_mels, std::size_t nfft, int sample_rate) {
  if (n_mels == 0) throw ConfigError("mel_filterbank: need at least one band");
  const std::size_t bins = nfft / 2 + 1;
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  Tensor fb({bins, n_mels});
  for (std::size_t k = 0; k < bins; ++k) {
    const double hz = static_cast<double>(k) * sample_rate / static_cast<double>(nfft);
    for (std::size_t m = 0; m < n_mels; ++m) {
      const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
      const double w = std::min((hz - lo) / (mid - lo), (hi - hz) / (hi - mid));
      fb.at(k, m) = std::max(0.0, w);
    }
  }
  return fb;
}

Tensor magnitude(const ComplexSpectrogram& s, std::size_t channel) {
  if (channel >= s.channels()) throw IndexError("magnitude: channel out of range");
  Tensor mag({s.frames(), s.bins()});
  for (std::size_t t = 0; t < s.frames(); ++t)
    for (std::size_t f = 0; f < s.bins(); ++f) mag.at(t, f) = std::abs(s.at(t, f, channel));
  return mag;
}

Tensor log_mel(const Tensor& mag, const Tensor& fb) { return numerics::log(numerics::matmul(mag, fb), kLogFloor); }

GlobalStats compute_global_stats(std::span<const Tensor> features) {
  if (features.empty()) throw ContractError("compute_global_stats: no features");
  const std::size_t d = features.front().dim(1);
  GlobalStats st;
  st.mean.assign(d, 0.0);
  st.stddev.assign(d, 0.0);
  std::size_t rows = 0;
  for (const auto& x : features) {
    if (x.rank() != 2 || x.dim(1) != d) throw ShapeError("compute_global_stats: inconsistent feature widths");
    for (std::size_t r = 0; r < x.dim(0); ++r)
      for (std::size_t k = 0; k < d; ++k) st.mean[k] += x.at(r, k);
    rows += x.dim(0);
  }
  if (rows == 0) throw ContractError("compute_global_stats: no frames");
  for (auto& m : st.mean) m /= static_cast<double>(rows);
  for (const auto& x : features)
    for (std::size_t r = 0; r < x.dim(0); ++r)
      for (std::size_t k = 0; k < d; ++k) {
        const double e = x.at(r, k) - st.mean[k];
        st.stddev[k] += e * e;
      }
  for (auto& s : st.stddev) s = std::sqrt(s / static_cast<double>(rows));
  return st;
}

Tensor apply_gmvn(const Tensor& x, const GlobalStats& stats) {
  const std::size_t d = stats.mean.size();
  if (x.rank() != 2 || x.dim(1) != d || stats.stddev.size() != d) {
    throw ShapeError("apply_gmvn: features " + numerics::shape_string(x.shape()) + " vs stats of width " +
                     std::to_string(d));
  }
  Tensor shift({d}), inv({d});
  for (std::size_t k = 0; k < d; ++k) {
    if (!(stats.stddev[k] > 0.0)) {
      throw DegenerateStatsError("apply_gmvn: zero standard deviation in dimension " + std::to_string(k));
    }
    shift[k] = -stats.mean[k];
    inv[k] = 1.0 / stats.stddev[k];
  }
  return numerics::mul_row(numerics::add_row(x, shift), inv);
}

Tensor log_mel_gmvn(const ComplexSpectrogram& s, const GlobalStats& stats, std::size_t n_mels) {
  const Tensor fb = mel_filterbank(n_mels, s.params().nfft);
  return apply_gmvn(log_mel(magnitude(s, 0), fb), stats);
}

}  // namespace msar::dsp
