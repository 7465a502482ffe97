#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "msar/training/model.hpp"
#include "msar/training/optimizer.hpp"

namespace msar::training {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct TrainingState {
  OptimizerState optimizer;
  std::size_t epoch = 0;  // completed epochs
};

struct StoredTensor {
  std::string name;
  numerics::Shape shape;
  std::vector<float> values;
};

// Little-endian layout: "MSAR", u16 version, config JSON, step, epoch,
// parameter table, Adam moments, statistics buffers, FNV-1a digest of all
// preceding bytes.
struct Checkpoint {
  std::uint16_t version = kCheckpointVersion;
  std::string config_json;
  std::uint64_t config_digest = 0;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::vector<StoredTensor> params;
  std::vector<std::vector<float>> adam_m, adam_v;  // empty when not stored
  std::vector<std::pair<std::string, std::vector<double>>> buffers;
};

Checkpoint make_checkpoint(Model& model, const TrainingState* state);
// Written to a temporary file and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
void save_checkpoint(Model& model, const TrainingState& state, const std::string& path);

// Parses and verifies a file; throws DataError on a malformed, truncated or
// foreign file. Nothing is applied.
Checkpoint read_checkpoint(const std::string& path);

// Copies stored values into `model` (and `state` when given) after checking
// every name and shape. A config digest mismatch is a ConfigError unless
// `allow_config_mismatch` is set, in which case it is logged.
void apply_checkpoint(const Checkpoint& ckpt, Model& model, TrainingState* state, bool allow_config_mismatch = false);

struct LoadedModel {
  Model model;
  TrainingState state;
};

// Rebuilds the model from the stored config and restores it.
LoadedModel load_checkpoint(const std::string& path);

}  // namespace msar::training
