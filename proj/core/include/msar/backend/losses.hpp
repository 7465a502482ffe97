#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "msar/backend/vocabulary.hpp"
#include "msar/numerics/tensor.hpp"

namespace msar::backend {

using numerics::Tensor;

// -log sum over CTC alignments of r given per-frame log-posteriors z [L x V].
// Differentiable in z. Returns +inf (zero gradient) when L is too short.
Tensor ctc_loss(const Tensor& z, const TokenSequence& r, std::size_t blank);

inline constexpr std::size_t kMaxPitSpeakers = 4;

// Permutation pi minimising sum_j cost[j][pi[j]] over all J! candidates,
// J <= 4. Candidates are visited in lexicographic order and only a strictly
// smaller total replaces the incumbent, so ties keep the smallest one.
std::vector<std::size_t> pit_assign(const std::vector<std::vector<double>>& cost);

// sum_j lambda * ctc[j] + (1 - lambda) * att[j]. Infinite CTC terms are
// dropped from the sum.
Tensor joint_loss(std::span<const Tensor> ctc, std::span<const Tensor> att, double lambda);

std::size_t edit_distance(const TokenSequence& a, const TokenSequence& b);
// Levenshtein distance / |ref|.
double token_error_rate(const TokenSequence& hyp, const TokenSequence& ref);

}  // namespace msar::backend
