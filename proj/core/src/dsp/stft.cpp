#include "msar/dsp/stft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "msar/error.hpp"

namespace msar::dsp {
namespace {

// FFTW planning is not thread safe; execution with the new-array interface
// is. Plans are created once per size under a lock and kept for the process.
class PlanCache {
 public:
  fftw_plan forward(std::size_t n) { return get(n, true); }
  fftw_plan inverse(std::size_t n) { return get(n, false); }

 private:
  fftw_plan get(std::size_t n, bool fwd) {
    std::lock_guard lock(mu_);
    auto key = std::make_pair(n, fwd);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::vector<double> r(n);
    std::vector<fftw_complex> c(n / 2 + 1);
    const int size = static_cast<int>(n);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    fftw_plan p = fwd ? fftw_plan_dft_r2c_1d(size, r.data(), c.data(), flags)
                      : fftw_plan_dft_c2r_1d(size, c.data(), r.data(), flags);
    plans_.emplace(key, p);
    return p;
  }

  std::mutex mu_;
  std::map<std::pair<std::size_t, bool>, fftw_plan> plans_;
};

PlanCache& plans() {
  static PlanCache cache;
  return cache;
}

void check_params(const StftParams& p) {
  if (p.win == 0 || p.hop == 0) throw ConfigError("stft: window and hop must be positive");
  if (p.nfft < p.win) throw ConfigError("stft: nfft must be at least the window length");
}

}  // namespace

ComplexSpectrogram::ComplexSpectrogram(std::size_t frames, std::size_t channels, StftParams params)
    : frames_(frames),
      bins_(params.bins()),
      channels_(channels),
      params_(params),
      data_(frames * params.bins() * channels) {}

ComplexSpectrogram ComplexSpectrogram::select_channel(std::size_t c) const {
  if (c >= channels_) throw IndexError("select_channel: channel " + std::to_string(c) + " out of range");
  ComplexSpectrogram out(frames_, 1, params_);
  for (std::size_t t = 0; t < frames_; ++t)
    for (std::size_t f = 0; f < bins_; ++f) out.at(t, f, 0) = at(t, f, c);
  return out;
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

std::size_t frame_count(std::size_t length, const StftParams& p) {
  if (length < p.win) return 0;
  return 1 + (length - p.win) / p.hop;
}

ComplexSpectrogram stft(const Waveform& w, const StftParams& p) {
  check_params(p);
  if (w.length() < p.win) {
    throw TooShortError("stft: signal of " + std::to_string(w.length()) + " samples is shorter than the " +
                        std::to_string(p.win) + "-sample window");
  }
  const std::size_t frames = frame_count(w.length(), p);
  const std::size_t bins = p.bins();
  const auto window = hann_window(p.win);
  ComplexSpectrogram s(frames, w.channels(), p);
  fftw_plan plan = plans().forward(p.nfft);
  std::vector<double> buf(p.nfft, 0.0);
  std::vector<fftw_complex> spec(bins);
  for (std::size_t c = 0; c < w.channels(); ++c) {
    auto x = w.channel(c);
    for (std::size_t t = 0; t < frames; ++t) {
      const std::size_t start = t * p.hop;
      for (std::size_t i = 0; i < p.win; ++i) buf[i] = window[i] * x[start + i];
      fftw_execute_dft_r2c(plan, buf.data(), spec.data());
      for (std::size_t f = 0; f < bins; ++f) s.at(t, f, c) = Complex(spec[f][0], spec[f][1]);
    }
  }
  return s;
}

Waveform istft(const ComplexSpectrogram& s, int sample_rate) {
  const StftParams& p = s.params();
  check_params(p);
  if (s.frames() == 0) return Waveform(s.channels(), 0, sample_rate);
  const std::size_t length = (s.frames() - 1) * p.hop + p.win;
  const std::size_t bins = p.bins();
  const auto window = hann_window(p.win);

  std::vector<double> norm(length, 0.0);
  for (std::size_t t = 0; t < s.frames(); ++t)
    for (std::size_t i = 0; i < p.win; ++i) norm[t * p.hop + i] += window[i] * window[i];
  // Near the ends the window sum vanishes; a relative floor keeps edits of the
  // spectrum from being amplified there.
  const double floor = kIstftNormFloor * *std::max_element(norm.begin(), norm.end());

  Waveform out(s.channels(), length, sample_rate);
  fftw_plan plan = plans().inverse(p.nfft);
  std::vector<fftw_complex> spec(bins);
  std::vector<double> buf(p.nfft);
  const double inv_n = 1.0 / static_cast<double>(p.nfft);
  for (std::size_t c = 0; c < s.channels(); ++c) {
    auto y = out.channel(c);
    for (std::size_t t = 0; t < s.frames(); ++t) {
      for (std::size_t f = 0; f < bins; ++f) {
        spec[f][0] = s.at(t, f, c).real();
        spec[f][1] = s.at(t, f, c).imag();
      }
      // The DC and Nyquist bins of a real signal are real.
      spec[0][1] = 0.0;
      if (p.nfft % 2 == 0) spec[bins - 1][1] = 0.0;
      fftw_execute_dft_c2r(plan, spec.data(), buf.data());
      for (std::size_t i = 0; i < p.win; ++i) y[t * p.hop + i] += window[i] * buf[i] * inv_n;
    }
    for (std::size_t n = 0; n < length; ++n) y[n] /= std::max(norm[n], floor);
  }
  return out;
}

std::vector<double> convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  std::size_t n = 1;
  while (n < out_len) n <<= 1;
  std::vector<double> ra(n, 0.0), rb(n, 0.0);
  std::ranges::copy(a, ra.begin());
  std::ranges::copy(b, rb.begin());
  std::vector<fftw_complex> fa(n / 2 + 1), fb(n / 2 + 1);
  fftw_execute_dft_r2c(plans().forward(n), ra.data(), fa.data());
  fftw_execute_dft_r2c(plans().forward(n), rb.data(), fb.data());
  for (std::size_t k = 0; k < fa.size(); ++k) {
    const double re = fa[k][0] * fb[k][0] - fa[k][1] * fb[k][1];
    const double im = fa[k][0] * fb[k][1] + fa[k][1] * fb[k][0];
    fa[k][0] = re;
    fa[k][1] = im;
  }
  fftw_execute_dft_c2r(plans().inverse(n), fa.data(), ra.data());
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = ra[i] / static_cast<double>(n);
  return out;
}

}  // namespace msar::dsp
