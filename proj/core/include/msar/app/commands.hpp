#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "msar/app/config.hpp"
#include "msar/dsp/synth.hpp"
#include "msar/training/trainer.hpp"

namespace msar::app {

namespace fs = std::filesystem;

inline constexpr int kManifestVersion = 1;

// One line of manifest.jsonl. Paths are relative to the dataset directory.
struct ManifestEntry {
  std::string id;
  std::string split;                  // "train" or "heldout"
  std::vector<std::string> mixture;   // one mono WAV per channel
  std::vector<std::string> references;  // per speaker, C-channel clean image
  std::string noise;                  // C-channel additive noise
  std::vector<std::vector<std::string>> transcripts;  // per speaker, symbols
  dsp::RoomSpec room;
  std::uint64_t seed = 0;
};

std::vector<ManifestEntry> read_manifest(const fs::path& data_dir);

struct GenDataResult {
  fs::path manifest;
  std::size_t utterances = 0;
};

GenDataResult cmd_gen_data(const ExperimentConfig& cfg, const fs::path& out_dir);

// Utterances of a split ("train", "heldout" or "all"), optionally
// dereverberated with WPE, in manifest order.
std::vector<training::Utterance> load_split(const fs::path& data_dir, const std::string& split,
                                            const backend::Vocabulary& vocab,
                                            const std::optional<dsp::WpeParams>& wpe = std::nullopt);

// Replaces the mixture by its WPE output.
void dereverberate(training::Utterance& utt, const dsp::WpeParams& params);

struct TrainRequest {
  fs::path data_dir;
  fs::path out_dir;
  std::optional<fs::path> resume;
  bool allow_config_mismatch = false;
};

struct TrainResult {
  std::vector<training::EpochMetrics> epochs;  // this invocation only
  std::size_t best_epoch = 0;
  double best_ter = 0.0;
  std::size_t final_step = 0;
};

// Writes metrics.csv, metrics.json, last.ckpt, best.ckpt and config.json
// (plus pretrain_metrics.csv when a pretraining stage runs).
TrainResult cmd_train(const ExperimentConfig& cfg, const TrainRequest& req);

// WPE settings for eval; unset fields fall back to the wpe section of the
// config.json next to the checkpoint, then to the library defaults.
struct WpeOverride {
  std::optional<std::size_t> taps;
  std::optional<std::size_t> delay;
  std::optional<std::size_t> iterations;
};

struct EvalRequest {
  fs::path checkpoint;
  fs::path data_dir;
  fs::path out_dir;
  std::string split = "heldout";
  std::optional<std::size_t> beam;
  std::optional<std::size_t> max_len;
  std::optional<WpeOverride> wpe;  // empty: no dereverberation
};

struct EvalResult {
  training::SplitMetrics metrics;
  std::size_t rows = 0;
};

// Writes eval.csv (one row per utterance and speaker) and eval.json. Beam,
// length and WPE settings default to config.json next to the checkpoint.
EvalResult cmd_eval(const EvalRequest& req);

struct SeparateRequest {
  std::optional<fs::path> checkpoint;  // empty: oracle masks
  std::vector<fs::path> mixture;       // stacked along channels
  std::vector<fs::path> references;    // per speaker
  std::optional<fs::path> noise;
  fs::path out_dir;
};

struct SeparateResult {
  std::vector<fs::path> outputs;
  std::vector<double> si_snr_mixture;  // per speaker, when references are given
  std::vector<double> si_snr_output;
};

// Writes sep<j>.wav per speaker and report.json.
SeparateResult cmd_separate(const SeparateRequest& req);

struct DereverbResult {
  std::vector<double> objective;
};

// Writes out and out + ".json" describing the parameters used.
DereverbResult cmd_dereverb(const fs::path& in, const fs::path& out, const dsp::WpeParams& params);

}  // namespace msar::app
