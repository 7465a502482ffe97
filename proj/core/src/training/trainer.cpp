#include "msar/training/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <sstream>
#include <thread>

#include "msar/dsp/synth.hpp"
#include "msar/error.hpp"
#include "msar/log.hpp"
#include "msar/numerics/graph.hpp"

namespace msar::training {
namespace {

// Runs fn(i) for i in [0, n) on up to worker_threads() threads; the first
// exception in index order is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_threads(), n);
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t w) {
    for (std::size_t i = w; i < n; i += workers) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct UtteranceGrad {
  backend::LossBreakdown loss;
  GradientSet grads;
};

UtteranceGrad loss_and_gradients(const Model& model, const ParamList& params, const Utterance& utt,
                                 const backend::Dropout& drop) {
  numerics::DiffGraph graph;
  UtteranceGrad out;
  {
    numerics::GraphScope scope(graph);
    out.loss = utterance_loss(model, utt, drop);
  }
  if (!std::isfinite(out.loss.joint.item())) return out;
  if (out.loss.joint.requires_grad()) graph.backward(out.loss.joint);
  out.grads.reserve(params.size());
  for (const auto& item : params.items()) {
    const auto* g = graph.grads().find(item.tensor.storage());
    out.grads.push_back(g ? *g : std::vector<double>());
  }
  return out;
}

std::string describe(const Utterance& u, const backend::LossBreakdown& l) {
  std::ostringstream s;
  s << "utterance " << u.id << ": ctc=" << l.ctc << " att=" << l.att << " joint=" << l.joint.item();
  return s.str();
}

}  // namespace

void TrainPlan::validate() const {
  if (epochs == 0) throw ConfigError("train.epochs must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (warmup == 0) throw ConfigError("train.warmup must be at least 1");
  if (!(lr_scale >= 0.0) || !std::isfinite(lr_scale)) throw ConfigError("train.lr_scale must be finite and non-negative");
  if (!(clip_norm > 0.0)) throw ConfigError("train.clip_norm must be positive");
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("MSAR_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
    log_warning("ignoring malformed MSAR_THREADS value");
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

EpochMetrics train_epoch(Model& model, std::span<const Utterance> train, std::span<const Utterance> heldout,
                         const TrainPlan& plan, TrainingState& state, const EvalOptions& eval) {
  plan.validate();
  if (train.empty()) throw DataError("train_epoch: empty training set");
  const ParamList params = model.parameters();
  if (state.optimizer.m.size() != params.size()) {
    const std::size_t step = state.optimizer.step;
    state.optimizer = OptimizerState::for_params(params, state.optimizer.config);
    state.optimizer.step = step;
  }
  EpochMetrics metrics;
  metrics.epoch = state.epoch + 1;
  metrics.backend_frozen = model.frontend.has_value() && state.epoch < plan.freeze_backend_epochs;
  std::vector<bool> trainable(params.size(), true);
  if (metrics.backend_frozen) {
    const auto backend = model.backend_mask();
    for (std::size_t i = 0; i < trainable.size(); ++i) trainable[i] = !backend[i];
  }

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  auto shuffle_rng = dsp::seeded_rng({plan.seed, state.epoch, 0x73687566ULL});
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  double sum_ctc = 0.0, sum_att = 0.0, sum_joint = 0.0;
  const std::size_t batches = (order.size() + plan.batch_size - 1) / plan.batch_size;
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t begin = b * plan.batch_size;
    const std::size_t count = std::min(plan.batch_size, order.size() - begin);
    std::vector<UtteranceGrad> results(count);
    parallel_for(count, [&](std::size_t i) {
      const std::size_t idx = order[begin + i];
      auto rng = dsp::seeded_rng({plan.seed, state.epoch, idx, 0x64726f70ULL});
      const backend::Dropout drop{model.config.dropout, &rng};
      results[i] = loss_and_gradients(model, params, train[idx], drop);
    });

    GradientSet grads = zero_gradients(params);
    for (std::size_t i = 0; i < count; ++i) {
      const auto& r = results[i];
      const Utterance& u = train[order[begin + i]];
      if (!std::isfinite(r.loss.joint.item()))
        throw NumericError("non-finite loss in epoch " + std::to_string(metrics.epoch) + ", batch " + std::to_string(b) +
                           ", " + describe(u, r.loss));
      sum_ctc += r.loss.ctc;
      sum_att += r.loss.att;
      sum_joint += r.loss.joint.item();
      for (std::size_t p = 0; p < grads.size(); ++p) {
        if (r.grads[p].empty()) continue;
        for (std::size_t k = 0; k < grads[p].size(); ++k) grads[p][k] += r.grads[p][k];
      }
    }
    const double inv = 1.0 / static_cast<double>(count);
    for (auto& g : grads)
      for (double& x : g) x *= inv;
    clip_global_norm(grads, plan.clip_norm, &trainable);
    const double lr = noam_lr(state.optimizer.step + 1, model.config.backend.d_att(), plan.warmup, plan.lr_scale);
    adam_step(params, grads, state.optimizer, lr, &trainable);
  }
  ++state.epoch;
  metrics.step = state.optimizer.step;
  const double n = static_cast<double>(train.size());
  metrics.train.utterances = train.size();
  metrics.train.loss_ctc = sum_ctc / n;
  metrics.train.loss_att = sum_att / n;
  metrics.train.loss_joint = sum_joint / n;
  if (!heldout.empty()) metrics.heldout = evaluate(model, heldout, eval);
  return metrics;
}

SplitMetrics evaluate_losses(const Model& model, std::span<const Utterance> data) {
  SplitMetrics m;
  m.utterances = data.size();
  if (data.empty()) return m;
  std::vector<backend::LossBreakdown> losses(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    numerics::NoGradScope no_grad;
    losses[i] = utterance_loss(model, data[i]);
  });
  for (const auto& l : losses) {
    m.loss_ctc += l.ctc;
    m.loss_att += l.att;
    m.loss_joint += l.joint.item();
  }
  const double n = static_cast<double>(data.size());
  m.loss_ctc /= n;
  m.loss_att /= n;
  m.loss_joint /= n;
  return m;
}

SplitMetrics evaluate(const Model& model, std::span<const Utterance> data, const EvalOptions& eval,
                      std::vector<UtteranceResult>* details) {
  if (data.empty()) throw DataError("evaluate: empty dataset");
  SplitMetrics m = evaluate_losses(model, data);
  const std::size_t eos = model.config.backend.vocabulary().sos_eos();
  std::vector<UtteranceResult> results(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    auto& r = results[i];
    r.id = data[i].id;
    for (const auto& h : recognize(model, data[i], eval.beam, eval.max_len)) r.hyps.push_back(h.symbols(eos));
    r.score = score_hypotheses(r.hyps, data[i].refs);
  });
  std::size_t errors = 0, tokens = 0;
  for (const auto& r : results) {
    errors += r.score.total_errors();
    tokens += r.score.total_ref_tokens();
  }
  if (tokens == 0) throw DataError("evaluate: references contain no tokens");
  m.ter = static_cast<double>(errors) / static_cast<double>(tokens);
  if (details) *details = std::move(results);
  return m;
}

}  // namespace msar::training
