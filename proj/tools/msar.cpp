#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "msar/app/commands.hpp"
#include "msar/error.hpp"
#include "msar/log.hpp"

namespace {

using namespace msar;
namespace fs = std::filesystem;

struct WpeFlags {
  std::optional<std::size_t> taps, delay, iterations;

  void add(CLI::App* cmd, const std::string& defaults) {
    cmd->add_option("--taps", taps, "WPE prediction filter taps per channel" + defaults);
    cmd->add_option("--delay", delay, "WPE prediction delay in frames" + defaults);
    cmd->add_option("--iters", iterations, "WPE variance/filter iterations" + defaults);
  }
  dsp::WpeParams params() const {
    const dsp::WpeParams d;
    return {taps.value_or(d.taps), delay.value_or(d.delay), iterations.value_or(d.iterations)};
  }
  app::WpeOverride overrides() const { return {taps, delay, iterations}; }
};

int run(int argc, char** argv) {
  CLI::App app{"Multi-speaker speech recognition toolkit: synthetic data, training, evaluation, beamforming, WPE"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "Seed override (data seed for gen-data, training seed for train)");

  std::string config_path, out_dir, data_dir, resume, checkpoint, split = "heldout", noise, in_wav, out_wav;
  std::vector<std::string> mixture, references;
  std::optional<std::size_t> beam, max_len;
  bool allow_mismatch = false, use_wpe = false, oracle = false;
  WpeFlags eval_wpe, derev_wpe;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-talker dataset with a JSONL manifest");
  gen->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Output dataset directory")->required();

  auto* train = app.add_subcommand("train", "Pretrain (optional) and train a model; writes metrics and checkpoints");
  train->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--data", data_dir, "Dataset directory from gen-data")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  train->add_flag("--allow-config-mismatch", allow_mismatch, "Resume even if the checkpoint config digest differs");

  auto* eval = app.add_subcommand("eval", "Decode a dataset split and report best-permutation token error rate");
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", out_dir, "Report directory")->required();
  eval->add_option("--split", split, "train, heldout or all")->capture_default_str()
      ->check(CLI::IsMember({"train", "heldout", "all"}));
  eval->add_option("--beam", beam, "Beam width (default: eval section of config.json beside the checkpoint, else 1)");
  eval->add_option("--max-len", max_len, "Maximum hypothesis length (same default source, else 16)");
  eval->add_flag("--wpe", use_wpe, "Dereverberate mixtures with WPE before recognition");
  eval_wpe.add(eval, " (default: the training config, else 10/3/3)");

  auto* sep = app.add_subcommand("separate", "Beamform a multi-channel mixture into one signal per speaker");
  auto* ck = sep->add_option("--checkpoint", checkpoint, "Checkpoint with a mask-net frontend")->check(CLI::ExistingFile);
  auto* orc = sep->add_flag("--oracle-masks", oracle, "Use oracle masks from --reference and --noise");
  ck->excludes(orc);
  orc->excludes(ck);
  sep->add_option("--mixture", mixture, "Mixture WAV(s), stacked along channels")->required()->check(CLI::ExistingFile);
  sep->add_option("--reference", references, "Clean reference WAV per speaker")->check(CLI::ExistingFile);
  sep->add_option("--noise", noise, "Noise WAV (oracle masks)")->check(CLI::ExistingFile);
  sep->add_option("--out", out_dir, "Output directory")->required();

  auto* der = app.add_subcommand("dereverb", "WPE dereverberation of a WAV file");
  der->add_option("--in", in_wav, "Input WAV")->required()->check(CLI::ExistingFile);
  der->add_option("--out", out_wav, "Output WAV")->required();
  derev_wpe.add(der, " (default 10/3/3)");

  for (auto* sub : {gen, train, eval, sep, der})
    sub->add_option("--seed", seed, "Seed override (data seed for gen-data, training seed for train)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (gen->parsed()) {
    auto cfg = app::load_experiment(config_path);
    if (seed) cfg.data.seed = *seed;
    app::cmd_gen_data(cfg, out_dir);
  } else if (train->parsed()) {
    auto cfg = app::load_experiment(config_path);
    if (seed) {
      cfg.train.seed = *seed;
      cfg.model_seed = *seed;
    }
    app::TrainRequest req{data_dir, out_dir, std::nullopt, allow_mismatch};
    if (!resume.empty()) req.resume = resume;
    const auto r = app::cmd_train(cfg, req);
    std::cout << "best epoch " << r.best_epoch << ", best heldout ter " << r.best_ter << ", steps " << r.final_step << "\n";
  } else if (eval->parsed()) {
    app::EvalRequest req;
    req.checkpoint = checkpoint;
    req.data_dir = data_dir;
    req.out_dir = out_dir;
    req.split = split;
    req.beam = beam;
    req.max_len = max_len;
    if (use_wpe) req.wpe = eval_wpe.overrides();
    const auto r = app::cmd_eval(req);
    std::cout << "ter " << r.metrics.ter << " over " << r.metrics.utterances << " utterances\n";
  } else if (sep->parsed()) {
    if (!oracle && checkpoint.empty()) throw ConfigError("separate: pass --checkpoint or --oracle-masks");
    app::SeparateRequest req;
    if (!checkpoint.empty()) req.checkpoint = fs::path(checkpoint);
    for (const auto& m : mixture) req.mixture.emplace_back(m);
    for (const auto& r : references) req.references.emplace_back(r);
    if (!noise.empty()) req.noise = fs::path(noise);
    req.out_dir = out_dir;
    const auto r = app::cmd_separate(req);
    for (std::size_t j = 0; j < r.si_snr_output.size(); ++j)
      std::cout << "speaker " << j << ": SI-SNR " << r.si_snr_mixture[j] << " dB -> " << r.si_snr_output[j] << " dB\n";
  } else if (der->parsed()) {
    app::cmd_dereverb(in_wav, out_wav, derev_wpe.params());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const msar::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const msar::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const msar::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
