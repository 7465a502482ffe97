#include "msar/numerics/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "msar/error.hpp"
#include "msar/numerics/graph.hpp"

namespace msar::numerics {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

template <class F>
Tensor unary(const Tensor& x, F&& f) {
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = f(px[i]);
  return out;
}

}  // namespace

// --- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  Tensor out({m, n});
  Map(out.data(), m, n).noalias() = MapC(a.data(), m, k) * MapC(b.data(), k, n);
  record_op({a, b}, out, [a, b, m, k, n](std::span<const double> g, GradTable& table) {
    MapC G(g.data(), m, n);
    if (a.requires_grad()) Map(table.slot(a).data(), m, k).noalias() += G * MapC(b.data(), k, n).transpose();
    if (b.requires_grad()) Map(table.slot(b).data(), k, n).noalias() += MapC(a.data(), m, k).transpose() * G;
  });
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_nt: inner dimensions disagree, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()) + "^T");
  }
  Tensor out({m, n});
  Map(out.data(), m, n).noalias() = MapC(a.data(), m, k) * MapC(b.data(), n, k).transpose();
  record_op({a, b}, out, [a, b, m, k, n](std::span<const double> g, GradTable& table) {
    MapC G(g.data(), m, n);
    if (a.requires_grad()) Map(table.slot(a).data(), m, k).noalias() += G * MapC(b.data(), n, k);
    if (b.requires_grad()) Map(table.slot(b).data(), n, k).noalias() += G.transpose() * MapC(a.data(), m, k);
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  Map(out.data(), n, m) = MapC(a.data(), m, n).transpose();
  record_op({a}, out, [a, m, n](std::span<const double> g, GradTable& table) {
    Map(table.slot(a).data(), m, n) += MapC(g.data(), n, m).transpose();
  });
  return out;
}

// --- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  record_op({a, b}, out, [a, b](std::span<const double> g, GradTable& table) {
    if (a.requires_grad()) {
      auto& ga = table.slot(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = table.slot(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  record_op({a, b}, out, [a, b](std::span<const double> g, GradTable& table) {
    if (a.requires_grad()) {
      auto& ga = table.slot(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = table.slot(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  record_op({a, b}, out, [a, b](std::span<const double> g, GradTable& table) {
    if (a.requires_grad()) {
      auto& ga = table.slot(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
    }
    if (b.requires_grad()) {
      auto& gb = table.slot(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out = unary(a, [factor](double v) { return v * factor; });
  record_op({a}, out, [a, factor](std::span<const double> g, GradTable& table) {
    auto& ga = table.slot(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
  return out;
}

Tensor add_scalar(const Tensor& a, double offset) {
  Tensor out = unary(a, [offset](double v) { return v + offset; });
  record_op({a}, out, [a](std::span<const double> g, GradTable& table) {
    auto& ga = table.slot(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

Tensor add_row(const Tensor& x, const Tensor& v) {
  const std::size_t n = last_dim(x);
  if (v.size() != n) {
    throw ShapeError("add_row: vector " + shape_string(v.shape()) + " does not match " + shape_string(x.shape()));
  }
  Tensor out(x.shape());
  const std::size_t rows = x.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x[r * n + c] + v[c];
  }
  record_op({x, v}, out, [x, v, rows, n](std::span<const double> g, GradTable& table) {
    if (x.requires_grad()) {
      auto& gx = table.slot(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (v.requires_grad()) {
      auto& gv = table.slot(v);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < n; ++c) gv[c] += g[r * n + c];
      }
    }
  });
  return out;
}

Tensor mul_row(const Tensor& x, const Tensor& v) {
  const std::size_t n = last_dim(x);
  if (v.size() != n) {
    throw ShapeError("mul_row: vector " + shape_string(v.shape()) + " does not match " + shape_string(x.shape()));
  }
  Tensor out(x.shape());
  const std::size_t rows = x.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x[r * n + c] * v[c];
  }
  record_op({x, v}, out, [x, v, rows, n](std::span<const double> g, GradTable& table) {
    if (x.requires_grad()) {
      auto& gx = table.slot(x);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[r * n + c] * v[c];
      }
    }
    if (v.requires_grad()) {
      auto& gv = table.slot(v);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < n; ++c) gv[c] += g[r * n + c] * x[r * n + c];
      }
    }
  });
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = unary(x, [](double v) { return v > 0.0 ? v : 0.0; });
  record_op({x}, out, [x](std::span<const double> g, GradTable& table) {
    auto& gx = table.slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) gx[i] += g[i];
    }
  });
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = unary(x, [](double v) {
    return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  });
  record_op({x}, out, [x, out](std::span<const double> g, GradTable& table) {
    auto& gx = table.slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * out[i] * (1.0 - out[i]);
  });
  return out;
}

Tensor tanh(const Tensor& x) {
  Tensor out = unary(x, [](double v) { return std::tanh(v); });
  record_op({x}, out, [x, out](std::span<const double> g, GradTable& table) {
    auto& gx = table.slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - out[i] * out[i]);
  });
  return out;
}

Tensor exp(const Tensor& x) {
  Tensor out = unary(x, [](double v) { return std::exp(v); });
  record_op({x}, out, [x, out](std::span<const double> g, GradTable& table) {
    auto& gx = table.slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * out[i];
  });
  return out;
}

Tensor log(const Tensor& x, double offset) {
  Tensor out = unary(x, [offset](double v) { return std::log(v + offset); });
  record_op({x}, out, [x, offset](std::span<const double> g, GradTable& table) {
    auto& gx = table.slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / (x[i] + offset);
  });
  return out;
}

// --- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = Tensor::scalar(s);
  record_op({x}, out, [x](std::span<const double> g, GradTable& table) {
    auto& gx = table.slot(x);
    for (auto& v : gx) v += g[0];
  });
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor weighted_sum(std::span<const Tensor> scalars, std::span<const double> weights) {
  if (scalars.size() != weights.size()) throw ContractError("weighted_sum: weights do not match terms");
  double s = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) s += weights[i] * scalars[i].item();
  Tensor out = Tensor::scalar(s);
  std::vector<Tensor> inputs(scalars.begin(), scalars.end());
  std::vector<double> w(weights.begin(), weights.end());
  record_op(inputs, out, [inputs, w](std::span<const double> g, GradTable& table) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i].requires_grad()) table.slot(inputs[i])[0] += w[i] * g[0];
    }
  });
  return out;
}

// --- normalisation --------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw IndexError("softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Tensor out(s);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, x[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(x[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= z;
    }
  }
  record_op({x}, out, [x, out, outer, inner, n](std::span<const double> g, GradTable& table) {
    auto& gx = table.slot(x);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * out[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t i = base + k * inner;
          gx[i] += out[i] * (g[i] - dot);
        }
      }
    }
  });
  return out;
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t n = last_dim(x);
  const std::size_t rows = x.size() / n;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* px = x.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, px[k]);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) z += std::exp(px[k] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t k = 0; k < n; ++k) out[r * n + k] = px[k] - lse;
  }
  record_op({x}, out, [x, out, rows, n](std::span<const double> g, GradTable& table) {
    auto& gx = table.slot(x);
    for (std::size_t r = 0; r < rows; ++r) {
      double gs = 0.0;
      for (std::size_t k = 0; k < n; ++k) gs += g[r * n + k];
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = r * n + k;
        gx[i] += g[i] - std::exp(out[i]) * gs;
      }
    }
  });
  return out;
}

Tensor masked_softmax(const Tensor& x, const Mask& mask) {
  require_rank(x, 2, "masked_softmax");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (mask.rows != rows || mask.cols != cols) {
    throw ShapeError("masked_softmax: mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                     " does not match scores " + shape_string(x.shape()));
  }
  Tensor out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      if (mask(r, c)) mx = std::max(mx, x.at(r, c));
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw ContractError("masked_softmax: row " + std::to_string(r) + " has no permitted entry");
    }
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double e = mask(r, c) ? std::exp(x.at(r, c) - mx) : 0.0;
      out.at(r, c) = e;
      z += e;
    }
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) /= z;
  }
  record_op({x}, out, [x, out, rows, cols](std::span<const double> g, GradTable& table) {
    auto& gx = table.slot(x);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * out[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        gx[i] += out[i] * (g[i] - dot);
      }
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = last_dim(x);
  if (gain.size() != d || bias.size() != d) {
    throw ShapeError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" + shape_string(bias.shape()) +
                     " do not match " + shape_string(x.shape()));
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.size() / d;
  Tensor out(x.shape());
  std::vector<double> xhat(x.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* px = x.data() + r * d;
    double mu = 0.0;
    for (std::size_t k = 0; k < d; ++k) mu += px[k];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t k = 0; k < d; ++k) var += (px[k] - mu) * (px[k] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t k = 0; k < d; ++k) {
      const double h = (px[k] - mu) * inv_std[r];
      xhat[r * d + k] = h;
      out[r * d + k] = gain[k] * h + bias[k];
    }
  }
  record_op({x, gain, bias}, out,
            [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](
                std::span<const double> g, GradTable& table) {
              if (gain.requires_grad()) {
                auto& gg = table.slot(gain);
                for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * xhat[i];
              }
              if (bias.requires_grad()) {
                auto& gb = table.slot(bias);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
              }
              if (x.requires_grad()) {
                auto& gx = table.slot(x);
                for (std::size_t r = 0; r < rows; ++r) {
                  double m1 = 0.0, m2 = 0.0;
                  for (std::size_t k = 0; k < d; ++k) {
                    const double dh = g[r * d + k] * gain[k];
                    m1 += dh;
                    m2 += dh * xhat[r * d + k];
                  }
                  m1 /= static_cast<double>(d);
                  m2 /= static_cast<double>(d);
                  for (std::size_t k = 0; k < d; ++k) {
                    const double dh = g[r * d + k] * gain[k];
                    gx[r * d + k] += inv_std[r] * (dh - m1 - xhat[r * d + k] * m2);
                  }
                }
              }
            });
  return out;
}

// --- convolution ----------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride, const Tensor& bias) {
  require_rank(input, 3, "conv2d");
  if (kernels.rank() != 4 || kernels.dim(2) != 3 || kernels.dim(3) != 3) {
    throw UnsupportedError("conv2d: only 3x3 kernels are supported, got " + shape_string(kernels.shape()));
  }
  if (stride != 1 && stride != 2) throw UnsupportedError("conv2d: stride must be 1 or 2");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernels.dim(0);
  if (kernels.dim(1) != cin) {
    throw ShapeError("conv2d: kernels " + shape_string(kernels.shape()) + " do not match input " +
                     shape_string(input.shape()));
  }
  if (bias.defined() && bias.size() != cout) throw ShapeError("conv2d: bias does not match output channels");
  const std::size_t ho = (h + stride - 1) / stride, wo = (w + stride - 1) / stride;
  const std::size_t kdim = cin * 9, npos = ho * wo;

  // im2col with zero padding 1.
  std::vector<double> col(kdim * npos, 0.0);
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* row = col.data() + (ci * 9 + ky * 3 + kx) * npos;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - 1;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - 1;
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            row[oy * wo + ox] = input[(ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
  Tensor out({cout, ho, wo});
  Map(out.data(), cout, npos).noalias() = MapC(kernels.data(), cout, kdim) * MapC(col.data(), kdim, npos);
  if (bias.defined()) {
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t p = 0; p < npos; ++p) out[co * npos + p] += bias[co];
    }
  }
  record_op({input, kernels, bias}, out,
            [input, kernels, bias, col = std::move(col), cin, h, w, cout, ho, wo, kdim, npos, stride](
                std::span<const double> g, GradTable& table) {
              MapC G(g.data(), cout, npos);
              if (kernels.requires_grad()) {
                Map(table.slot(kernels).data(), cout, kdim).noalias() += G * MapC(col.data(), kdim, npos).transpose();
              }
              if (bias.defined() && bias.requires_grad()) {
                auto& gb = table.slot(bias);
                for (std::size_t co = 0; co < cout; ++co) gb[co] += G.row(static_cast<Eigen::Index>(co)).sum();
              }
              if (input.requires_grad()) {
                RowMat dcol = MapC(kernels.data(), cout, kdim).transpose() * G;
                auto& gi = table.slot(input);
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  for (std::size_t ky = 0; ky < 3; ++ky) {
                    for (std::size_t kx = 0; kx < 3; ++kx) {
                      const double* row = dcol.data() + (ci * 9 + ky * 3 + kx) * npos;
                      for (std::size_t oy = 0; oy < ho; ++oy) {
                        const long iy = static_cast<long>(oy * stride + ky) - 1;
                        if (iy < 0 || iy >= static_cast<long>(h)) continue;
                        for (std::size_t ox = 0; ox < wo; ++ox) {
                          const long ix = static_cast<long>(ox * stride + kx) - 1;
                          if (ix < 0 || ix >= static_cast<long>(w)) continue;
                          gi[(ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] +=
                              row[oy * wo + ox];
                        }
                      }
                    }
                  }
                }
              }
            });
  return out;
}

// --- shape ----------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (element_count(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()));
  record_op({x}, out, [x](std::span<const double> g, GradTable& table) {
    auto& gx = table.slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank(x, 2, "slice_rows");
  const std::size_t cols = x.dim(1);
  if (begin + count > x.dim(0)) throw IndexError("slice_rows: range exceeds " + shape_string(x.shape()));
  Tensor out({count, cols}, std::vector<double>(x.data() + begin * cols, x.data() + (begin + count) * cols));
  record_op({x}, out, [x, begin, cols](std::span<const double> g, GradTable& table) {
    auto& gx = table.slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * cols + i] += g[i];
  });
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (begin + count > cols) throw IndexError("slice_cols: range exceeds " + shape_string(x.shape()));
  Tensor out({rows, count});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < count; ++c) out[r * count + c] = x[r * cols + begin + c];
  }
  record_op({x}, out, [x, begin, rows, cols, count](std::span<const double> g, GradTable& table) {
    auto& gx = table.slot(x);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < count; ++c) gx[r * cols + begin + c] += g[r * count + c];
    }
  });
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t cols = parts[0].dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.dim(0);
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.values().begin(), p.values().end());
  Tensor out({rows, cols}, std::move(data));
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  record_op(inputs, out, [inputs](std::span<const double> g, GradTable& table) {
    std::size_t offset = 0;
    for (const auto& p : inputs) {
      if (p.requires_grad()) {
        auto& gp = table.slot(p);
        for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g[offset + i];
      }
      offset += p.size();
    }
  });
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.dim(1);
  }
  Tensor out({rows, cols});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < pc; ++c) out[r * cols + offset + c] = p[r * pc + c];
    }
    offset += pc;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  record_op(inputs, out, [inputs, rows, cols](std::span<const double> g, GradTable& table) {
    std::size_t off = 0;
    for (const auto& p : inputs) {
      const std::size_t pc = p.dim(1);
      if (p.requires_grad()) {
        auto& gp = table.slot(p);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < pc; ++c) gp[r * pc + c] += g[r * cols + off + c];
        }
      }
      off += pc;
    }
  });
  return out;
}

Tensor gather_rows(const Tensor& table_t, std::span<const std::size_t> rows) {
  require_rank(table_t, 2, "gather_rows");
  const std::size_t cols = table_t.dim(1);
  Tensor out({rows.size(), cols});
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= table_t.dim(0)) throw IndexError("gather_rows: row index out of range");
    std::copy_n(table_t.data() + idx[i] * cols, cols, out.data() + i * cols);
  }
  record_op({table_t}, out, [table_t, idx, cols](std::span<const double> g, GradTable& table) {
    auto& gt = table.slot(table_t);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t c = 0; c < cols; ++c) gt[idx[i] * cols + c] += g[i * cols + c];
    }
  });
  return out;
}

Tensor flatten_channels(const Tensor& x) {
  require_rank(x, 3, "flatten_channels");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out({h, c * w});
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t k = 0; k < w; ++k) out[r * c * w + ci * w + k] = x[(ci * h + r) * w + k];
    }
  }
  record_op({x}, out, [x, c, h, w](std::span<const double> g, GradTable& table) {
    auto& gx = table.slot(x);
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t k = 0; k < w; ++k) gx[(ci * h + r) * w + k] += g[r * c * w + ci * w + k];
      }
    }
  });
  return out;
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ContractError("dropout probability must be below 1");
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<double> m(x.size());
  const double s = 1.0 / (1.0 - p);
  for (auto& v : m) v = keep(rng) ? s : 0.0;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * m[i];
  record_op({x}, out, [x, m = std::move(m)](std::span<const double> g, GradTable& table) {
    auto& gx = table.slot(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * m[i];
  });
  return out;
}

// --- losses ---------------------------------------------------------------

Tensor label_smoothed_nll(const Tensor& log_probs, std::span<const std::size_t> targets, double eps) {
  require_rank(log_probs, 2, "label_smoothed_nll");
  const std::size_t n = log_probs.dim(0), v = log_probs.dim(1);
  if (targets.size() != n) throw ShapeError("label_smoothed_nll: one target per row required");
  if (n == 0) throw ContractError("label_smoothed_nll: empty target sequence");
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  const double off = eps / static_cast<double>(v);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (tg[r] >= v) throw IndexError("label_smoothed_nll: target index out of range");
    double row_sum = 0.0;
    for (std::size_t k = 0; k < v; ++k) row_sum += log_probs.at(r, k);
    total += -(1.0 - eps) * log_probs.at(r, tg[r]) - off * row_sum;
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  record_op({log_probs}, out, [log_probs, tg, eps, off, n, v](std::span<const double> g, GradTable& table) {
    auto& gl = table.slot(log_probs);
    const double s = g[0] / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t k = 0; k < v; ++k) gl[r * v + k] -= s * off;
      gl[r * v + tg[r]] -= s * (1.0 - eps);
    }
  });
  return out;
}

}  // namespace msar::numerics
