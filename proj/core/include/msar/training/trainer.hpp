#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "msar/training/checkpoint.hpp"
#include "msar/training/model.hpp"

namespace msar::training {

struct TrainPlan {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  std::size_t warmup = 800;
  double lr_scale = 1.0;                 // k of the Noam schedule
  std::size_t freeze_backend_epochs = 15; // applies to models with a frontend
  double clip_norm = 5.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EvalOptions {
  std::size_t beam = 1;
  std::size_t max_len = 16;
};

struct SplitMetrics {
  std::size_t utterances = 0;
  double loss_ctc = 0.0;   // means over utterances
  double loss_att = 0.0;
  double loss_joint = 0.0;
  double ter = std::numeric_limits<double>::quiet_NaN();  // NaN when not measured
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // optimizer steps after the epoch
  bool backend_frozen = false;
  SplitMetrics train;
  SplitMetrics heldout;
};

struct UtteranceResult {
  std::string id;
  std::vector<TokenSequence> hyps;  // symbols, eos stripped
  UtteranceScore score;
};

// Worker threads for per-utterance work: MSAR_THREADS when set, otherwise the
// hardware concurrency.
std::size_t worker_threads();

// One pass over `train` in seeded shuffled batches: per-utterance losses and
// gradients (possibly in parallel), reduced in utterance order, averaged over
// the batch, clipped, then one Adam step at the Noam rate. While
// state.epoch < plan.freeze_backend_epochs a model with a frontend keeps its
// backend fixed. Afterwards `heldout` (when non-empty) is scored. Throws
// NumericError on a non-finite loss.
EpochMetrics train_epoch(Model& model, std::span<const Utterance> train, std::span<const Utterance> heldout,
                         const TrainPlan& plan, TrainingState& state, const EvalOptions& eval = {});

// Losses and best-permutation token error rate (total errors over total
// reference tokens).
SplitMetrics evaluate(const Model& model, std::span<const Utterance> data, const EvalOptions& eval,
                      std::vector<UtteranceResult>* details = nullptr);

// Losses only.
SplitMetrics evaluate_losses(const Model& model, std::span<const Utterance> data);

}  // namespace msar::training
