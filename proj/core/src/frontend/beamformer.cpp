#include "msar/frontend/beamformer.hpp"

#include <cmath>
#include <string>

#include "msar/error.hpp"
#include "msar/log.hpp"
#include "msar/numerics/graph.hpp"

namespace msar::frontend {
namespace {

using numerics::GradTable;
using numerics::Shape;

// Weighted covariance of one bin. Returns false when the weights sum to zero;
// phi is then kMaskRescue * (mean channel power) * I.
bool weighted_covariance(const ComplexSpectrogram& x, std::size_t f, const double* mask, std::size_t stride,
                         ComplexMatrix& phi, double& weight_sum) {
  const std::size_t c_n = x.channels();
  phi = ComplexMatrix(c_n, c_n);
  weight_sum = 0.0;
  for (std::size_t t = 0; t < x.frames(); ++t) weight_sum += mask[t * stride];
  if (!(weight_sum > 0.0)) {
    double power = 0.0;
    for (std::size_t t = 0; t < x.frames(); ++t)
      for (std::size_t c = 0; c < c_n; ++c) power += std::norm(x.at(t, f, c));
    power /= static_cast<double>(x.frames() * c_n);
    for (std::size_t i = 0; i < c_n; ++i) phi(i, i) = kMaskRescue * power;
    return false;
  }
  for (std::size_t t = 0; t < x.frames(); ++t) {
    const double w = mask[t * stride];
    if (w == 0.0) continue;
    const Complex* v = x.vector(t, f);
    for (std::size_t i = 0; i < c_n; ++i)
      for (std::size_t j = i; j < c_n; ++j) phi(i, j) += w * v[i] * std::conj(v[j]);
  }
  for (std::size_t i = 0; i < c_n; ++i) {
    phi(i, i) = phi(i, i).real() / weight_sum;
    for (std::size_t j = i + 1; j < c_n; ++j) {
      phi(i, j) /= weight_sum;
      phi(j, i) = std::conj(phi(i, j));
    }
  }
  return true;
}

struct MvdrBin {
  ComplexMatrix loaded;  // interference matrix actually solved against
  ComplexMatrix w;       // loaded^{-1} target
  std::vector<Complex> v;
  Complex trace;
  std::vector<Complex> g;
  bool fallback = false;
  bool was_loaded = false;
};

MvdrBin mvdr_bin(const ComplexMatrix& target, const ComplexMatrix& interference, const std::vector<double>& u) {
  const std::size_t c_n = target.rows();
  MvdrBin b;
  numerics::SolveInfo info;
  b.loaded = numerics::loaded_if_needed(interference, &info);
  b.was_loaded = info.loaded;
  b.w = numerics::lu_solve(b.loaded, target);
  b.trace = b.w.trace();
  b.v.assign(c_n, Complex{});
  for (std::size_t i = 0; i < c_n; ++i)
    for (std::size_t k = 0; k < c_n; ++k) b.v[i] += b.w(i, k) * u[k];
  b.g.assign(c_n, Complex{});
  if (!(std::abs(b.trace) >= kTraceFallback * b.w.frobenius_norm()) || b.w.frobenius_norm() == 0.0) {
    b.fallback = true;
    for (std::size_t i = 0; i < c_n; ++i) b.g[i] = u[i];
  } else {
    for (std::size_t i = 0; i < c_n; ++i) b.g[i] = b.v[i] / b.trace;
  }
  return b;
}

void require_complex_shape(const Tensor& t, const Shape& expected, const char* op) {
  if (t.shape() != expected) {
    throw ShapeError(std::string(op) + ": expected " + numerics::shape_string(expected) + ", got " +
                     numerics::shape_string(t.shape()));
  }
}

void store(Tensor& t, std::size_t offset, Complex z) {
  t[offset] = z.real();
  t[offset + 1] = z.imag();
}

}  // namespace

MaskSet::MaskSet(std::size_t frames, std::size_t bins, std::size_t channels, std::size_t sources)
    : frames_(frames), bins_(bins), channels_(channels), sources_(sources), values_(frames * bins * channels * sources) {
  if (sources < 2) throw ContractError("MaskSet: need noise plus at least one speaker");
}

Tensor MaskSet::channel_mean(std::size_t j) const {
  Tensor m({frames_, bins_});
  for (std::size_t t = 0; t < frames_; ++t)
    for (std::size_t f = 0; f < bins_; ++f) {
      double s = 0.0;
      for (std::size_t c = 0; c < channels_; ++c) s += at(t, f, c, j);
      m.at(t, f) = s / static_cast<double>(channels_);
    }
  return m;
}

MaskSet oracle_masks(const std::vector<ComplexSpectrogram>& components) {
  if (components.size() < 2) throw ContractError("oracle_masks: need noise plus at least one speaker");
  const auto& first = components.front();
  for (const auto& s : components)
    if (s.frames() != first.frames() || s.bins() != first.bins() || s.channels() != first.channels())
      throw ShapeError("oracle_masks: component spectrograms differ in shape");
  MaskSet m(first.frames(), first.bins(), first.channels(), components.size());
  for (std::size_t t = 0; t < first.frames(); ++t)
    for (std::size_t f = 0; f < first.bins(); ++f)
      for (std::size_t c = 0; c < first.channels(); ++c) {
        std::size_t best = 0;
        double best_power = -1.0;
        for (std::size_t j = 0; j < components.size(); ++j) {
          const double p = std::norm(components[j].at(t, f, c));
          if (p > best_power) {
            best_power = p;
            best = j;
          }
        }
        m.at(t, f, c, best) = 1.0;
      }
  return m;
}

PsdSet estimate_psd(const ComplexSpectrogram& x, const MaskSet& m) {
  if (m.frames() != x.frames() || m.bins() != x.bins() || m.channels() != x.channels())
    throw ShapeError("estimate_psd: mask and spectrogram dimensions differ");
  PsdSet out;
  out.bins = x.bins();
  out.channels = x.channels();
  out.phi.resize(m.sources());
  std::size_t rescued = 0;
  for (std::size_t j = 0; j < m.sources(); ++j) {
    const Tensor avg = m.channel_mean(j);
    out.phi[j].resize(x.bins());
    for (std::size_t f = 0; f < x.bins(); ++f) {
      double s = 0.0;
      if (!weighted_covariance(x, f, avg.data() + f, x.bins(), out.phi[j][f], s)) ++rescued;
    }
  }
  if (rescued > 0) log_warning("estimate_psd: degenerate all-zero mask in " + std::to_string(rescued) + " (source, bin) pairs");
  return out;
}

std::vector<std::vector<Complex>> mvdr_filter(const PsdSet& psds, std::size_t j, const std::vector<double>& u) {
  if (j == 0 || j >= psds.sources()) throw IndexError("mvdr_filter: speaker index must be in 1..J");
  if (u.size() != psds.channels) throw ShapeError("mvdr_filter: reference vector length differs from channel count");
  std::vector<std::vector<Complex>> g(psds.bins);
  std::size_t fallbacks = 0;
  for (std::size_t f = 0; f < psds.bins; ++f) {
    ComplexMatrix n(psds.channels, psds.channels);
    for (std::size_t i = 0; i < psds.sources(); ++i)
      if (i != j) n += psds.phi[i][f];
    auto b = mvdr_bin(psds.phi[j][f], n, u);
    fallbacks += b.fallback;
    g[f] = std::move(b.g);
  }
  if (fallbacks > 0) log_warning("mvdr_filter: reference passthrough in " + std::to_string(fallbacks) + " bins");
  return g;
}

ComplexSpectrogram beamform(const ComplexSpectrogram& x, const std::vector<std::vector<Complex>>& g) {
  if (g.size() != x.bins()) throw ShapeError("beamform: filter count differs from bin count");
  ComplexSpectrogram out(x.frames(), 1, x.params());
  for (std::size_t f = 0; f < x.bins(); ++f) {
    if (g[f].size() != x.channels()) throw ShapeError("beamform: filter length differs from channel count");
    for (std::size_t t = 0; t < x.frames(); ++t) {
      const Complex* v = x.vector(t, f);
      Complex s{};
      for (std::size_t c = 0; c < x.channels(); ++c) s += std::conj(g[f][c]) * v[c];
      out.at(t, f, 0) = s;
    }
  }
  return out;
}

// --- differentiable forms ------------------------------------------------

ComplexMatrix psd_matrix(const Tensor& phi, std::size_t f) {
  const std::size_t c_n = phi.dim(1);
  ComplexMatrix m(c_n, c_n);
  const double* p = phi.data() + f * c_n * c_n * 2;
  for (std::size_t i = 0; i < c_n * c_n; ++i) m.data()[i] = Complex(p[2 * i], p[2 * i + 1]);
  return m;
}

Tensor psd_op(const Tensor& mask, const ComplexSpectrogram& x) {
  const std::size_t t_n = x.frames(), f_n = x.bins(), c_n = x.channels();
  require_complex_shape(mask, {t_n, f_n}, "psd_op");
  Tensor out({f_n, c_n, c_n, 2});
  std::vector<double> sums(f_n);
  std::vector<unsigned char> usable(f_n);
  std::size_t rescued = 0;
  for (std::size_t f = 0; f < f_n; ++f) {
    ComplexMatrix phi;
    usable[f] = weighted_covariance(x, f, mask.data() + f, f_n, phi, sums[f]);
    rescued += !usable[f];
    for (std::size_t i = 0; i < c_n * c_n; ++i) store(out, (f * c_n * c_n + i) * 2, phi.data()[i]);
  }
  if (rescued > 0) log_debug("psd_op: degenerate mask loaded in " + std::to_string(rescued) + " bins");
  numerics::record_op({mask}, out, [mask, out, x, sums, usable](std::span<const double> g, GradTable& table) {
    const std::size_t t_n = x.frames(), f_n = x.bins(), c_n = x.channels();
    auto& gm = table.slot(mask);
    for (std::size_t f = 0; f < f_n; ++f) {
      if (!usable[f]) continue;
      const double* gb = g.data() + f * c_n * c_n * 2;
      const double* pb = out.data() + f * c_n * c_n * 2;
      // d Phi / d m_t = (x x^H - Phi) / sum
      double base = 0.0;
      for (std::size_t i = 0; i < c_n * c_n * 2; ++i) base += gb[i] * pb[i];
      for (std::size_t t = 0; t < t_n; ++t) {
        const Complex* v = x.vector(t, f);
        double acc = 0.0;
        for (std::size_t i = 0; i < c_n; ++i)
          for (std::size_t j = 0; j < c_n; ++j) {
            const Complex o = v[i] * std::conj(v[j]);
            acc += gb[(i * c_n + j) * 2] * o.real() + gb[(i * c_n + j) * 2 + 1] * o.imag();
          }
        gm[t * f_n + f] += (acc - base) / sums[f];
      }
    }
  });
  return out;
}

Tensor mvdr_op(const Tensor& target, const Tensor& interference, const Tensor& u) {
  if (target.rank() != 4 || target.dim(3) != 2 || target.dim(1) != target.dim(2))
    throw ShapeError("mvdr_op: target must be [F x C x C x 2], got " + numerics::shape_string(target.shape()));
  const std::size_t f_n = target.dim(0), c_n = target.dim(1);
  require_complex_shape(interference, target.shape(), "mvdr_op");
  require_complex_shape(u, {c_n}, "mvdr_op");
  std::vector<double> uv(u.values().begin(), u.values().end());
  Tensor out({f_n, c_n, 2});
  std::vector<MvdrBin> bins(f_n);
  std::size_t fallbacks = 0;
  for (std::size_t f = 0; f < f_n; ++f) {
    bins[f] = mvdr_bin(psd_matrix(target, f), psd_matrix(interference, f), uv);
    fallbacks += bins[f].fallback;
    for (std::size_t i = 0; i < c_n; ++i) store(out, (f * c_n + i) * 2, bins[f].g[i]);
  }
  if (fallbacks > 0) log_debug("mvdr_op: reference passthrough in " + std::to_string(fallbacks) + " bins");
  if (!numerics::will_record({&target, &interference, &u})) return out;

  numerics::record_op({target, interference, u}, out,
                      [target, interference, u, uv, bins = std::move(bins), f_n, c_n](std::span<const double> g,
                                                                                      GradTable& table) {
    std::vector<double>* gt = target.requires_grad() ? &table.slot(target) : nullptr;
    std::vector<double>* gn = interference.requires_grad() ? &table.slot(interference) : nullptr;
    std::vector<double>* gu = u.requires_grad() ? &table.slot(u) : nullptr;
    const double load = numerics::kDiagonalLoading / static_cast<double>(c_n);
    for (std::size_t f = 0; f < f_n; ++f) {
      const MvdrBin& b = bins[f];
      std::vector<Complex> gbar(c_n);
      for (std::size_t i = 0; i < c_n; ++i) gbar[i] = Complex(g[(f * c_n + i) * 2], g[(f * c_n + i) * 2 + 1]);
      if (b.fallback) {
        if (gu)
          for (std::size_t i = 0; i < c_n; ++i) (*gu)[i] += gbar[i].real();
        continue;
      }
      const Complex t = b.trace;
      std::vector<Complex> vbar(c_n);
      Complex tbar{};
      for (std::size_t i = 0; i < c_n; ++i) {
        vbar[i] = gbar[i] / std::conj(t);
        tbar -= std::conj(b.v[i] / (t * t)) * gbar[i];
      }
      if (gu)
        for (std::size_t k = 0; k < c_n; ++k) {
          Complex s{};
          for (std::size_t i = 0; i < c_n; ++i) s += std::conj(b.w(i, k)) * vbar[i];
          (*gu)[k] += s.real();
        }
      if (!gt && !gn) continue;
      ComplexMatrix wbar(c_n, c_n);
      for (std::size_t i = 0; i < c_n; ++i) {
        for (std::size_t k = 0; k < c_n; ++k) wbar(i, k) = vbar[i] * uv[k];
        wbar(i, i) += tbar;
      }
      // W = N^{-1} Phi: Phi_bar = N^{-H} W_bar, N_bar = -Phi_bar W^H (N Hermitian)
      ComplexMatrix phibar = numerics::lu_solve(b.loaded, wbar);
      if (gt) {
        double* dst = gt->data() + f * c_n * c_n * 2;
        for (std::size_t i = 0; i < c_n * c_n; ++i) {
          dst[2 * i] += phibar.data()[i].real();
          dst[2 * i + 1] += phibar.data()[i].imag();
        }
      }
      if (gn) {
        ComplexMatrix nbar = phibar * b.w.adjoint();
        Complex diag{};
        if (b.was_loaded)
          for (std::size_t i = 0; i < c_n; ++i) diag += nbar(i, i);
        double* dst = gn->data() + f * c_n * c_n * 2;
        for (std::size_t i = 0; i < c_n; ++i)
          for (std::size_t k = 0; k < c_n; ++k) {
            Complex v = -nbar(i, k);
            if (i == k && b.was_loaded) v -= load * diag;
            dst[(i * c_n + k) * 2] += v.real();
            dst[(i * c_n + k) * 2 + 1] += v.imag();
          }
      }
    }
  });
  return out;
}

Tensor beamform_op(const Tensor& g, const ComplexSpectrogram& x) {
  const std::size_t t_n = x.frames(), f_n = x.bins(), c_n = x.channels();
  require_complex_shape(g, {f_n, c_n, 2}, "beamform_op");
  Tensor out({t_n, f_n, 2});
  for (std::size_t t = 0; t < t_n; ++t)
    for (std::size_t f = 0; f < f_n; ++f) {
      const Complex* v = x.vector(t, f);
      Complex s{};
      for (std::size_t c = 0; c < c_n; ++c) s += std::conj(Complex(g[(f * c_n + c) * 2], g[(f * c_n + c) * 2 + 1])) * v[c];
      store(out, (t * f_n + f) * 2, s);
    }
  numerics::record_op({g}, out, [g, x](std::span<const double> sbar, GradTable& table) {
    const std::size_t t_n = x.frames(), f_n = x.bins(), c_n = x.channels();
    auto& gg = table.slot(g);
    for (std::size_t t = 0; t < t_n; ++t)
      for (std::size_t f = 0; f < f_n; ++f) {
        const Complex sb(sbar[(t * f_n + f) * 2], sbar[(t * f_n + f) * 2 + 1]);
        const Complex* v = x.vector(t, f);
        for (std::size_t c = 0; c < c_n; ++c) {
          const Complex d = v[c] * std::conj(sb);
          gg[(f * c_n + c) * 2] += d.real();
          gg[(f * c_n + c) * 2 + 1] += d.imag();
        }
      }
  });
  return out;
}

Tensor complex_abs(const Tensor& z) {
  if (z.rank() < 1 || z.shape().back() != 2) throw ShapeError("complex_abs: trailing axis must have size 2");
  Shape shape(z.shape().begin(), z.shape().end() - 1);
  Tensor out(shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::hypot(z[2 * i], z[2 * i + 1]);
  numerics::record_op({z}, out, [z, out](std::span<const double> g, GradTable& table) {
    auto& gz = table.slot(z);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (out[i] == 0.0) continue;
      gz[2 * i] += g[i] * z[2 * i] / out[i];
      gz[2 * i + 1] += g[i] * z[2 * i + 1] / out[i];
    }
  });
  return out;
}

Tensor psd_diagonal(const Tensor& phi) {
  if (phi.rank() != 4 || phi.dim(3) != 2 || phi.dim(1) != phi.dim(2))
    throw ShapeError("psd_diagonal: expected [F x C x C x 2], got " + numerics::shape_string(phi.shape()));
  const std::size_t f_n = phi.dim(0), c_n = phi.dim(1);
  Tensor out({c_n, f_n});
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t f = 0; f < f_n; ++f) out.at(c, f) = phi[((f * c_n + c) * c_n + c) * 2];
  numerics::record_op({phi}, out, [phi, f_n, c_n](std::span<const double> g, GradTable& table) {
    auto& gp = table.slot(phi);
    for (std::size_t c = 0; c < c_n; ++c)
      for (std::size_t f = 0; f < f_n; ++f) gp[((f * c_n + c) * c_n + c) * 2] += g[c * f_n + f];
  });
  return out;
}

ComplexSpectrogram to_spectrogram(const Tensor& s, const dsp::StftParams& params) {
  if (s.rank() != 3 || s.dim(2) != 2 || s.dim(1) != params.bins())
    throw ShapeError("to_spectrogram: expected [T x F x 2], got " + numerics::shape_string(s.shape()));
  ComplexSpectrogram out(s.dim(0), 1, params);
  for (std::size_t i = 0; i < s.dim(0) * s.dim(1); ++i) out.data()[i] = Complex(s[2 * i], s[2 * i + 1]);
  return out;
}

}  // namespace msar::frontend
