#include "msar/dsp/wpe.hpp"

#include <algorithm>
#include <cmath>

#include "msar/error.hpp"

namespace msar::dsp {
namespace {

using numerics::ComplexMatrix;

void check(const ComplexSpectrogram& s, const WpeParams& p) {
  if (p.taps == 0) throw ConfigError("wpe: taps must be positive");
  if (p.delay == 0) throw ConfigError("wpe: delay must be at least one frame");
  if (s.frames() <= p.taps + p.delay) {
    throw TooShortError("wpe: " + std::to_string(s.frames()) + " frames do not exceed taps + delay = " +
                        std::to_string(p.taps + p.delay));
  }
}

// Stacked delayed observation for frame t at bin f: entry k*C + c holds
// x_{t - delay - k, f, c}, zero before the first frame.
void stack_past(const ComplexSpectrogram& s, const WpeParams& p, std::size_t t, std::size_t f, Complex* out) {
  const std::size_t c_n = s.channels();
  for (std::size_t k = 0; k < p.taps; ++k) {
    const std::size_t lag = p.delay + k;
    for (std::size_t c = 0; c < c_n; ++c) out[k * c_n + c] = t >= lag ? s.at(t - lag, f, c) : Complex{};
  }
}

std::vector<double> variances(const ComplexSpectrogram& d, std::size_t f) {
  std::vector<double> lambda(d.frames());
  for (std::size_t t = 0; t < d.frames(); ++t) {
    double e = 0.0;
    for (std::size_t c = 0; c < d.channels(); ++c) e += std::norm(d.at(t, f, c));
    lambda[t] = std::max(e / static_cast<double>(d.channels()), kWpeVarianceFloor);
  }
  return lambda;
}

// d_{t,f} = x_{t,f} - g^H x~_{t,f} for one bin.
void subtract_prediction(const ComplexSpectrogram& x, const WpeParams& p, std::size_t f, const ComplexMatrix& g,
                         ComplexSpectrogram& d) {
  const std::size_t c_n = x.channels();
  const std::size_t k_n = c_n * p.taps;
  std::vector<Complex> past(k_n);
  for (std::size_t t = 0; t < x.frames(); ++t) {
    stack_past(x, p, t, f, past.data());
    for (std::size_t c = 0; c < c_n; ++c) {
      Complex pred{};
      for (std::size_t k = 0; k < k_n; ++k) pred += std::conj(g(k, c)) * past[k];
      d.at(t, f, c) = x.at(t, f, c) - pred;
    }
  }
}

ComplexMatrix estimate_filter(const ComplexSpectrogram& x, const WpeParams& p, std::size_t f,
                              const std::vector<double>& lambda) {
  const std::size_t c_n = x.channels();
  const std::size_t k_n = c_n * p.taps;
  ComplexMatrix r(k_n, k_n), q(k_n, c_n);
  std::vector<Complex> past(k_n);
  for (std::size_t t = 0; t < x.frames(); ++t) {
    stack_past(x, p, t, f, past.data());
    const double w = 1.0 / lambda[t];
    for (std::size_t i = 0; i < k_n; ++i) {
      const Complex a = past[i] * w;
      if (a == Complex{}) continue;
      for (std::size_t j = 0; j < k_n; ++j) r(i, j) += a * std::conj(past[j]);
      const Complex* now = x.vector(t, f);
      for (std::size_t c = 0; c < c_n; ++c) q(i, c) += a * std::conj(now[c]);
    }
  }
  if (std::abs(r.trace()) == 0.0) return ComplexMatrix(k_n, c_n);
  // Symmetrise to remove accumulated roundoff before the Hermitian solve.
  for (std::size_t i = 0; i < k_n; ++i) {
    r(i, i) = r(i, i).real();
    for (std::size_t j = i + 1; j < k_n; ++j) {
      const Complex avg = 0.5 * (r(i, j) + std::conj(r(j, i)));
      r(i, j) = avg;
      r(j, i) = std::conj(avg);
    }
  }
  return numerics::hermitian_solve(r, q);
}

}  // namespace

double wpe_objective(const ComplexSpectrogram& d) {
  double total = 0.0;
  for (std::size_t f = 0; f < d.bins(); ++f) {
    const auto lambda = variances(d, f);
    for (std::size_t t = 0; t < d.frames(); ++t)
      for (std::size_t c = 0; c < d.channels(); ++c) total += std::norm(d.at(t, f, c)) / lambda[t] + std::log(lambda[t]);
  }
  return total;
}

WpeResult wpe_detailed(const ComplexSpectrogram& s, const WpeParams& p) {
  check(s, p);
  WpeResult res;
  res.output = s;
  res.filters.params = p;
  res.filters.g.assign(s.bins(), ComplexMatrix(s.channels() * p.taps, s.channels()));
  res.objective.push_back(wpe_objective(s));
  for (std::size_t it = 0; it < p.iterations; ++it) {
    for (std::size_t f = 0; f < s.bins(); ++f) {
      const auto lambda = variances(res.output, f);
      res.filters.g[f] = estimate_filter(s, p, f, lambda);
    }
    for (std::size_t f = 0; f < s.bins(); ++f) subtract_prediction(s, p, f, res.filters.g[f], res.output);
    res.objective.push_back(wpe_objective(res.output));
  }
  return res;
}

ComplexSpectrogram wpe(const ComplexSpectrogram& s, const WpeParams& p) { return wpe_detailed(s, p).output; }

ComplexSpectrogram apply_wpe_filters(const ComplexSpectrogram& s, const WpeFilters& filters) {
  check(s, filters.params);
  if (filters.g.size() != s.bins()) throw ShapeError("apply_wpe_filters: filter count does not match bins");
  ComplexSpectrogram out = s;
  for (std::size_t f = 0; f < s.bins(); ++f) {
    const auto& g = filters.g[f];
    if (g.rows() != s.channels() * filters.params.taps || g.cols() != s.channels())
      throw ShapeError("apply_wpe_filters: filter shape does not match channel count");
    subtract_prediction(s, filters.params, f, g, out);
  }
  return out;
}

}  // namespace msar::dsp
