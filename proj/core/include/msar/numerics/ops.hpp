#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "msar/numerics/tensor.hpp"

// Differentiable primitives. Every function records itself on the active
// DiffGraph when one of its inputs requires gradients.
namespace msar::numerics {

// --- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);     // [m x k] . [k x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m x k] . [n x k]^T
Tensor transpose(const Tensor& a);                   // 2-D

// --- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

// Row broadcasts: v has the size of x's last dimension.
Tensor add_row(const Tensor& x, const Tensor& v);
Tensor mul_row(const Tensor& x, const Tensor& v);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
// log(x + offset)
Tensor log(const Tensor& x, double offset = 0.0);

// --- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Weighted sum of scalars: sum_i w_i * s_i.
Tensor weighted_sum(std::span<const Tensor> scalars, std::span<const double> weights);

// --- normalisation --------------------------------------------------------

// Softmax along `axis` (max-subtracted).
Tensor softmax(const Tensor& x, std::size_t axis);
// Log-softmax along the last axis.
Tensor log_softmax(const Tensor& x);
// Row softmax of a 2-D tensor restricted to allowed entries; disallowed
// entries get probability 0. Every row must allow at least one entry.
Tensor masked_softmax(const Tensor& x, const Mask& mask);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-12);

// --- convolution ----------------------------------------------------------

// Cross-correlation of [cin x h x w] with [cout x cin x 3 x 3] kernels,
// zero padding 1, stride 1 or 2. Output [cout x ceil(h/s) x ceil(w/s)].
// `bias` ([cout]) may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride, const Tensor& bias = {});

// --- shape ----------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);
// [c x h x w] -> [h x (c*w)], channel-major within each row.
Tensor flatten_channels(const Tensor& x);

// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

// --- losses ---------------------------------------------------------------

// Mean over rows of the cross-entropy between log-probabilities `log_probs`
// ([N x V]) and the label-smoothed target (1 - eps) * onehot + eps / V.
Tensor label_smoothed_nll(const Tensor& log_probs, std::span<const std::size_t> targets, double eps);

}  // namespace msar::numerics
