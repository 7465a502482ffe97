#pragma once

// Loop-level re-composition of Transformer layers in long double, used to
// check the tensor implementations end to end.

#include <vector>

#include "msar/attention/attention.hpp"

namespace msar::testing {

using Matrix = std::vector<std::vector<long double>>;

Matrix to_matrix(const numerics::Tensor& t);
double max_diff(const numerics::Tensor& t, const Matrix& m);

Matrix oracle_layer_norm(const Matrix& x, const numerics::Tensor& gain, const numerics::Tensor& bias, long double eps);
Matrix oracle_linear(const Matrix& x, const numerics::Tensor& w, const numerics::Tensor& b);
Matrix oracle_mha(const Matrix& q, const Matrix& k, const Matrix& v, const attention::ProjectionSet& p,
                  const numerics::Mask* mask);
Matrix oracle_encoder_layer(const Matrix& x, const attention::EncoderLayerParams& p, const numerics::Mask* mask);
Matrix oracle_decoder_layer(const Matrix& y, const Matrix& memory, const attention::DecoderLayerParams& p);

}  // namespace msar::testing
