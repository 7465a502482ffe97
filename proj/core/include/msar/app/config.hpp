#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "msar/dsp/scenario.hpp"
#include "msar/dsp/wpe.hpp"
#include "msar/training/trainer.hpp"

namespace msar::app {

struct DataConfig {
  std::size_t num_utterances = 400;
  std::size_t heldout_utterances = 40;
  dsp::ScenarioConfig scenario;
  std::uint64_t seed = 11;
};

enum class WpeUse { kOff, kOn, kMulti };  // kMulti: every other training utterance

struct WpeConfig {
  WpeUse train = WpeUse::kOff;
  dsp::WpeParams params;
};

// One experiment document: {"data", "model", "train", "eval", "wpe"}. Every
// section and key is optional; unknown keys are rejected.
struct ExperimentConfig {
  DataConfig data;
  training::ModelConfig model;
  training::TrainPlan train;
  std::size_t pretrain_epochs = 0;
  std::uint64_t model_seed = 1;
  training::EvalOptions eval;
  WpeConfig wpe;

  void validate() const;
};

ExperimentConfig parse_experiment(const std::string& json_text);
ExperimentConfig load_experiment(const std::filesystem::path& path);
// Canonical JSON with every field spelled out.
std::string experiment_json(const ExperimentConfig& cfg);

}  // namespace msar::app
