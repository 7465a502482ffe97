#include "msar/backend/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "msar/error.hpp"
#include "msar/numerics/graph.hpp"
#include "msar/numerics/ops.hpp"

namespace msar::backend {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

Tensor ctc_loss(const Tensor& z, const TokenSequence& r, std::size_t blank) {
  if (z.rank() != 2) throw ShapeError("ctc_loss: expected [L x V] log-posteriors, got " + numerics::shape_string(z.shape()));
  const std::size_t l_n = z.dim(0), v_n = z.dim(1);
  if (blank >= v_n) throw IndexError("ctc_loss: blank index out of range");
  for (auto t : r)
    if (t >= v_n || t == blank) throw VocabularyError("ctc_loss: invalid reference token " + std::to_string(t));
  if (l_n == 0) throw ContractError("ctc_loss: no frames");

  std::vector<std::size_t> ext(2 * r.size() + 1, blank);
  for (std::size_t i = 0; i < r.size(); ++i) ext[2 * i + 1] = r[i];
  const std::size_t s_n = ext.size();
  auto skip_ok = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(l_n * s_n, kNegInf), beta(l_n * s_n, kNegInf);
  alpha[0] = z.at(0, ext[0]);
  if (s_n > 1) alpha[1] = z.at(0, ext[1]);
  for (std::size_t t = 1; t < l_n; ++t)
    for (std::size_t s = 0; s < s_n; ++s) {
      double a = alpha[(t - 1) * s_n + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * s_n + s - 1]);
      if (skip_ok(s)) a = log_add(a, alpha[(t - 1) * s_n + s - 2]);
      alpha[t * s_n + s] = a == kNegInf ? kNegInf : a + z.at(t, ext[s]);
    }
  const std::size_t last = (l_n - 1) * s_n;
  double log_p = alpha[last + s_n - 1];
  if (s_n > 1) log_p = log_add(log_p, alpha[last + s_n - 2]);

  Tensor out = Tensor::scalar(log_p == kNegInf ? std::numeric_limits<double>::infinity() : -log_p);
  if (log_p == kNegInf || !numerics::will_record({&z})) return out;

  beta[last + s_n - 1] = z.at(l_n - 1, ext[s_n - 1]);
  if (s_n > 1) beta[last + s_n - 2] = z.at(l_n - 1, ext[s_n - 2]);
  for (std::size_t t = l_n - 1; t-- > 0;)
    for (std::size_t s = 0; s < s_n; ++s) {
      double b = beta[(t + 1) * s_n + s];
      if (s + 1 < s_n) b = log_add(b, beta[(t + 1) * s_n + s + 1]);
      if (s + 2 < s_n && ext[s + 2] != blank && ext[s + 2] != ext[s]) b = log_add(b, beta[(t + 1) * s_n + s + 2]);
      beta[t * s_n + s] = b == kNegInf ? kNegInf : b + z.at(t, ext[s]);
    }

  // d(-log p)/dz_{t,k} = -sum_{s: ext[s] = k} alpha_t(s) beta_t(s) / (y_t(k) p)
  std::vector<double> grad(l_n * v_n, 0.0);
  for (std::size_t t = 0; t < l_n; ++t) {
    std::vector<double> acc(v_n, kNegInf);
    for (std::size_t s = 0; s < s_n; ++s)
      acc[ext[s]] = log_add(acc[ext[s]], alpha[t * s_n + s] + beta[t * s_n + s]);
    for (std::size_t k = 0; k < v_n; ++k)
      if (acc[k] != kNegInf) grad[t * v_n + k] = -std::exp(acc[k] - z.at(t, k) - log_p);
  }
  numerics::record_op({z}, out, [z, grad = std::move(grad)](std::span<const double> g, numerics::GradTable& table) {
    auto& gz = table.slot(z);
    for (std::size_t i = 0; i < grad.size(); ++i) gz[i] += g[0] * grad[i];
  });
  return out;
}

std::vector<std::size_t> pit_assign(const std::vector<std::vector<double>>& cost) {
  const std::size_t j_n = cost.size();
  if (j_n == 0) throw ContractError("pit_assign: empty cost matrix");
  if (j_n > kMaxPitSpeakers)
    throw UnsupportedError("pit_assign: at most " + std::to_string(kMaxPitSpeakers) + " speakers");
  for (const auto& row : cost) {
    if (row.size() != j_n) throw ShapeError("pit_assign: cost matrix must be square");
    for (double v : row)
      if (std::isnan(v) || v == -std::numeric_limits<double>::infinity())
        throw NumericError("pit_assign: cost entries must be finite or +inf");
  }
  std::vector<std::size_t> perm(j_n), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_cost = 0.0;
  do {
    double c = 0.0;
    for (std::size_t j = 0; j < j_n; ++j) c += cost[j][perm[j]];
    if (best.empty() || c < best_cost) {
      best = perm;
      best_cost = c;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

Tensor joint_loss(std::span<const Tensor> ctc, std::span<const Tensor> att, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("joint_loss: lambda must lie in [0, 1]");
  if (ctc.size() != att.size() || ctc.empty()) throw ContractError("joint_loss: need one CTC and one attention loss per stream");
  std::vector<Tensor> terms;
  std::vector<double> weights;
  for (std::size_t j = 0; j < ctc.size(); ++j) {
    if (lambda > 0.0 && std::isfinite(ctc[j].item())) {
      terms.push_back(ctc[j]);
      weights.push_back(lambda);
    }
    if (lambda < 1.0) {
      terms.push_back(att[j]);
      weights.push_back(1.0 - lambda);
    }
  }
  if (terms.empty()) return Tensor::scalar(0.0);
  return numerics::weighted_sum(terms, weights);
}

std::size_t edit_distance(const TokenSequence& a, const TokenSequence& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t k = 1; k <= b.size(); ++k)
      cur[k] = std::min({prev[k] + 1, cur[k - 1] + 1, prev[k - 1] + (a[i - 1] == b[k - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double token_error_rate(const TokenSequence& hyp, const TokenSequence& ref) {
  if (ref.empty()) throw ContractError("token_error_rate: empty reference");
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

}  // namespace msar::backend
