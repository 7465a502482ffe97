#include "msar/app/commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "../common/json_fields.hpp"
#include "msar/dsp/wpe.hpp"
#include "msar/error.hpp"
#include "msar/frontend/beamformer.hpp"
#include "msar/log.hpp"
#include "msar/training/data.hpp"

namespace msar::app {
namespace {

using detail::json;

std::string utterance_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "utt%04zu", i);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream out(path, std::ios::out | mode);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

json number_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

json room_json(const dsp::RoomSpec& r) {
  return {{"mode", r.mode == dsp::RoomMode::kReverberant ? "reverberant" : "anechoic"},
          {"t60", r.t60},
          {"tail_gain", r.tail_gain},
          {"delays", r.delays},
          {"decays", r.decays},
          {"seed", r.seed}};
}

dsp::RoomSpec parse_room(const json& j) {
  dsp::RoomSpec r;
  r.mode = j.at("mode").get<std::string>() == "reverberant" ? dsp::RoomMode::kReverberant : dsp::RoomMode::kAnechoic;
  r.t60 = j.at("t60").get<double>();
  r.tail_gain = j.at("tail_gain").get<double>();
  r.delays = j.at("delays").get<std::vector<std::vector<std::size_t>>>();
  r.decays = j.at("decays").get<std::vector<std::vector<double>>>();
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

dsp::Waveform read_stacked(const std::vector<fs::path>& paths) {
  if (paths.empty()) throw DataError("no input WAV given");
  std::vector<dsp::Waveform> parts;
  for (const auto& p : paths) parts.push_back(dsp::read_wav(p));
  if (parts.size() == 1) return parts.front();
  for (const auto& w : parts)
    if (w.length() != parts.front().length()) throw DataError("input WAVs differ in length");
  return dsp::Waveform::stack(parts);
}

json metrics_json(const training::EpochMetrics& m) {
  auto split = [](const training::SplitMetrics& s) {
    return json{{"utterances", s.utterances},
                {"loss_ctc", s.loss_ctc},
                {"loss_att", s.loss_att},
                {"loss_joint", s.loss_joint},
                {"ter", number_or_null(s.ter)}};
  };
  json j = {{"epoch", m.epoch}, {"step", m.step}, {"backend_frozen", m.backend_frozen}, {"train", split(m.train)}};
  if (m.heldout.utterances > 0) j["heldout"] = split(m.heldout);
  return j;
}

void append_rows(std::ostream& out, const training::EpochMetrics& m) {
  auto row = [&](const char* split, const training::SplitMetrics& s) {
    out << m.epoch << ',' << split << ',' << format_number(s.loss_ctc) << ',' << format_number(s.loss_att) << ','
        << format_number(s.loss_joint) << ',' << format_number(s.ter) << '\n';
  };
  row("train", m.train);
  if (m.heldout.utterances > 0) row("heldout", m.heldout);
}

constexpr const char* kMetricsHeader = "epoch,split,loss_ctc,loss_att,loss_joint,ter\n";

std::string render(const backend::Vocabulary& v, const backend::TokenSequence& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ' ';
    out += s[i] < v.size() ? v.token(s[i]) : "?";
  }
  return out;
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const fs::path& data_dir) {
  const fs::path path = data_dir / "manifest.jsonl";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (j.at("version").get<int>() != kManifestVersion)
        throw DataError(path.string() + ":" + std::to_string(n) + ": unsupported manifest version");
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.split = j.at("split").get<std::string>();
      e.mixture = j.at("mixture").get<std::vector<std::string>>();
      e.references = j.at("references").get<std::vector<std::string>>();
      e.noise = j.at("noise").get<std::string>();
      e.transcripts = j.at("transcripts").get<std::vector<std::vector<std::string>>>();
      e.room = parse_room(j.at("room"));
      e.seed = j.at("seed").get<std::uint64_t>();
      if (e.references.size() != e.transcripts.size())
        throw DataError(path.string() + ":" + std::to_string(n) + ": reference and transcript counts differ");
      out.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": malformed manifest line: " + ex.what());
    }
  }
  return out;
}

GenDataResult cmd_gen_data(const ExperimentConfig& cfg, const fs::path& out_dir) {
  cfg.data.scenario.validate();
  ensure_dir(out_dir);
  const auto vocab = backend::Vocabulary::letters(cfg.data.scenario.vocab);
  const std::size_t total = cfg.data.num_utterances + cfg.data.heldout_utterances;
  GenDataResult result;
  result.manifest = out_dir / "manifest.jsonl";
  auto manifest = open_out(result.manifest);
  for (std::size_t i = 0; i < total; ++i) {
    const std::string id = utterance_id(i);
    const std::uint64_t seed = training::utterance_seed(cfg.data.seed, i);
    const dsp::Scenario sc = dsp::make_scenario(cfg.data.scenario, seed);
    ensure_dir(out_dir / id);
    json j;
    j["version"] = kManifestVersion;
    j["id"] = id;
    j["split"] = i < cfg.data.num_utterances ? "train" : "heldout";
    j["seed"] = seed;
    std::vector<std::string> mixture, refs;
    for (std::size_t c = 0; c < sc.mixture.channels(); ++c) {
      mixture.push_back(id + "/mix_c" + std::to_string(c) + ".wav");
      dsp::write_wav(out_dir / mixture.back(), sc.mixture.select_channel(c));
    }
    for (std::size_t s = 0; s < sc.images.size(); ++s) {
      refs.push_back(id + "/s" + std::to_string(s) + ".wav");
      dsp::write_wav(out_dir / refs.back(), sc.images[s]);
    }
    const std::string noise = id + "/noise.wav";
    dsp::write_wav(out_dir / noise, sc.noise);
    std::vector<std::vector<std::string>> transcripts;
    for (const auto& t : sc.tokens) {
      std::vector<std::string> sym;
      for (auto id_ : training::to_vocabulary(t)) sym.push_back(vocab.token(id_));
      transcripts.push_back(std::move(sym));
    }
    j["mixture"] = mixture;
    j["references"] = refs;
    j["noise"] = noise;
    j["transcripts"] = transcripts;
    j["room"] = room_json(sc.room);
    manifest << j.dump() << '\n';
    ++result.utterances;
  }
  if (!manifest) throw IoError("write failed: " + result.manifest.string());
  write_text(out_dir / "data_config.json", experiment_json(cfg) + "\n");
  log_info("gen-data: wrote " + std::to_string(result.utterances) + " utterances to " + out_dir.string());
  return result;
}

void dereverberate(training::Utterance& utt, const dsp::WpeParams& params) {
  utt.mixture = dsp::wpe(utt.mixture, params);
  utt.features = {};
}

std::vector<training::Utterance> load_split(const fs::path& data_dir, const std::string& split,
                                            const backend::Vocabulary& vocab,
                                            const std::optional<dsp::WpeParams>& wpe) {
  if (split != "train" && split != "heldout" && split != "all")
    throw ConfigError("split must be 'train', 'heldout' or 'all'");
  std::vector<training::Utterance> out;
  for (const auto& e : read_manifest(data_dir)) {
    if (split != "all" && e.split != split) continue;
    training::Utterance u;
    u.id = e.id;
    std::vector<fs::path> mix;
    for (const auto& m : e.mixture) mix.push_back(data_dir / m);
    u.mixture = dsp::stft(read_stacked(mix));
    for (const auto& r : e.references) u.references.push_back(dsp::stft(dsp::read_wav(data_dir / r).select_channel(0)));
    for (const auto& t : e.transcripts) {
      backend::TokenSequence ids;
      for (const auto& sym : t) ids.push_back(vocab.id(sym));
      vocab.check_reference(ids);
      u.refs.push_back(std::move(ids));
    }
    if (wpe) dereverberate(u, *wpe);
    out.push_back(std::move(u));
  }
  return out;
}

TrainResult cmd_train(const ExperimentConfig& cfg, const TrainRequest& req) {
  cfg.validate();
  ensure_dir(req.out_dir);
  const auto vocab = cfg.model.backend.vocabulary();
  const std::optional<dsp::WpeParams> all_wpe =
      cfg.wpe.train == WpeUse::kOn ? std::optional(cfg.wpe.params) : std::nullopt;
  auto train = load_split(req.data_dir, "train", vocab, all_wpe);
  auto heldout = load_split(req.data_dir, "heldout", vocab, all_wpe);
  if (train.empty()) throw DataError("train: dataset " + req.data_dir.string() + " has no training utterances");
  if (cfg.wpe.train == WpeUse::kMulti)
    for (std::size_t i = 0; i < train.size(); i += 2) dereverberate(train[i], cfg.wpe.params);
  for (const auto& u : train) {
    if (u.refs.size() != cfg.model.backend.speakers)
      throw DataError("train: utterance " + u.id + " has " + std::to_string(u.refs.size()) + " speakers, model expects " +
                      std::to_string(cfg.model.backend.speakers));
    if (cfg.model.multichannel() && u.mixture.channels() < 2)
      throw UnsupportedError("train: the beamforming model needs multi-channel mixtures");
  }

  training::Model model = training::Model::init(cfg.model, cfg.model_seed);
  training::TrainingState state;
  json history = json::array();
  double best_ter = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  const fs::path csv_path = req.out_dir / "metrics.csv", json_path = req.out_dir / "metrics.json";
  if (req.resume) {
    training::apply_checkpoint(training::read_checkpoint(req.resume->string()), model, &state, req.allow_config_mismatch);
    log_info("train: resumed at epoch " + std::to_string(state.epoch) + ", step " + std::to_string(state.optimizer.step));
    if (fs::exists(json_path)) {
      std::ifstream in(json_path);
      const json prev = json::parse(in, nullptr, false);
      if (!prev.is_discarded() && prev.contains("epochs")) {
        for (const auto& e : prev["epochs"])
          if (e.at("epoch").get<std::size_t>() <= state.epoch) history.push_back(e);
        if (prev.contains("best_epoch") && prev["best_epoch"].is_number_unsigned() &&
            prev["best_epoch"].get<std::size_t>() <= state.epoch && prev["best_heldout_ter"].is_number()) {
          best_epoch = prev["best_epoch"].get<std::size_t>();
          best_ter = prev["best_heldout_ter"].get<double>();
        }
      }
    }
  } else {
    training::fit_statistics(model, train);
  }
  training::attach_features(model, train);
  training::attach_features(model, heldout);
  write_text(req.out_dir / "config.json", experiment_json(cfg) + "\n");

  if (!req.resume && cfg.pretrain_epochs > 0) {
    const auto ptrain = training::single_speaker_examples(model, train);
    const auto pheld = training::single_speaker_examples(model, heldout);
    training::TrainPlan plan = cfg.train;
    plan.epochs = cfg.pretrain_epochs;
    plan.freeze_backend_epochs = 0;
    training::TrainingState pstate;
    auto out = open_out(req.out_dir / "pretrain_metrics.csv");
    out << kMetricsHeader;
    for (std::size_t e = 0; e < cfg.pretrain_epochs; ++e) {
      const auto m = training::train_epoch(model, ptrain, pheld, plan, pstate, cfg.eval);
      append_rows(out, m);
      out.flush();
      log_info("pretrain epoch " + std::to_string(m.epoch) + ": loss " + format_number(m.train.loss_joint) +
               ", heldout ter " + format_number(m.heldout.ter));
    }
  }

  std::ofstream csv;
  if (req.resume && fs::exists(csv_path)) {
    // Keep the rows of completed epochs only.
    std::ifstream in(csv_path);
    std::string line, kept;
    std::getline(in, line);
    kept = std::string(kMetricsHeader);
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      if (comma != std::string::npos && std::stoul(line.substr(0, comma)) <= state.epoch) kept += line + '\n';
    }
    in.close();
    csv = open_out(csv_path);
    csv << kept;
  } else {
    csv = open_out(csv_path);
    csv << kMetricsHeader;
  }

  TrainResult result;
  while (state.epoch < cfg.train.epochs) {
    const auto m = training::train_epoch(model, train, heldout, cfg.train, state, cfg.eval);
    append_rows(csv, m);
    csv.flush();
    history.push_back(metrics_json(m));
    result.epochs.push_back(m);
    training::save_checkpoint(model, state, (req.out_dir / "last.ckpt").string());
    const double score = heldout.empty() ? m.train.loss_joint : m.heldout.ter;
    if (score < best_ter) {
      best_ter = score;
      best_epoch = m.epoch;
      training::save_checkpoint(model, state, (req.out_dir / "best.ckpt").string());
    }
    json summary = {{"epochs", history},
                    {"best_epoch", best_epoch},
                    {"best_heldout_ter", heldout.empty() ? json(nullptr) : json(best_ter)},
                    {"steps", state.optimizer.step}};
    write_text(json_path, summary.dump(2) + "\n");
    log_info("epoch " + std::to_string(m.epoch) + (m.backend_frozen ? " (backend frozen)" : "") + ": train joint " +
             format_number(m.train.loss_joint) + ", heldout joint " + format_number(m.heldout.loss_joint) + ", ter " +
             format_number(m.heldout.ter));
  }
  result.best_epoch = best_epoch;
  result.best_ter = best_ter;
  result.final_step = state.optimizer.step;
  return result;
}

EvalResult cmd_eval(const EvalRequest& req) {
  auto loaded = training::load_checkpoint(req.checkpoint.string());
  auto& model = loaded.model;
  const auto vocab = model.config.backend.vocabulary();
  std::optional<ExperimentConfig> sibling_cfg;
  if (const fs::path sibling = req.checkpoint.parent_path() / "config.json"; fs::exists(sibling))
    sibling_cfg = load_experiment(sibling);
  std::optional<dsp::WpeParams> wpe;
  if (req.wpe) {
    dsp::WpeParams p = sibling_cfg ? sibling_cfg->wpe.params : dsp::WpeParams{};
    if (req.wpe->taps) p.taps = *req.wpe->taps;
    if (req.wpe->delay) p.delay = *req.wpe->delay;
    if (req.wpe->iterations) p.iterations = *req.wpe->iterations;
    wpe = p;
  }
  auto data = load_split(req.data_dir, req.split, vocab, wpe);
  if (data.empty()) throw DataError("eval: empty dataset (split '" + req.split + "' of " + req.data_dir.string() + ")");
  for (const auto& u : data) {
    if (u.refs.size() != model.config.backend.speakers)
      throw ConfigError("eval: utterance " + u.id + " has " + std::to_string(u.refs.size()) +
                        " speakers but the checkpoint expects " + std::to_string(model.config.backend.speakers));
    if (model.config.multichannel() && u.mixture.channels() < 2)
      throw UnsupportedError("eval: the beamforming model needs multi-channel mixtures");
  }
  training::attach_features(model, data);
  training::EvalOptions opts;
  if (sibling_cfg) opts = sibling_cfg->eval;
  if (req.beam) opts.beam = *req.beam;
  if (req.max_len) opts.max_len = *req.max_len;
  std::vector<training::UtteranceResult> details;
  EvalResult result;
  result.metrics = training::evaluate(model, data, opts, &details);

  ensure_dir(req.out_dir);
  auto csv = open_out(req.out_dir / "eval.csv");
  csv << "id,speaker,reference,hypothesis,errors,ref_tokens\n";
  for (std::size_t i = 0; i < details.size(); ++i) {
    const auto& d = details[i];
    for (std::size_t k = 0; k < data[i].refs.size(); ++k) {
      std::size_t j = 0;
      while (d.score.perm[j] != k) ++j;
      csv << d.id << ',' << k << ',' << render(vocab, data[i].refs[k]) << ',' << render(vocab, d.hyps[j]) << ','
          << d.score.errors[j] << ',' << d.score.ref_tokens[j] << '\n';
      ++result.rows;
    }
  }
  json summary = {{"split", req.split},
                  {"utterances", result.metrics.utterances},
                  {"rows", result.rows},
                  {"ter", result.metrics.ter},
                  {"loss_ctc", result.metrics.loss_ctc},
                  {"loss_att", result.metrics.loss_att},
                  {"loss_joint", result.metrics.loss_joint},
                  {"beam", opts.beam},
                  {"max_len", opts.max_len},
                  {"step", loaded.state.optimizer.step}};
  if (wpe)
    summary["wpe"] = {{"taps", wpe->taps}, {"delay", wpe->delay}, {"iterations", wpe->iterations}};
  else
    summary["wpe"] = nullptr;
  write_text(req.out_dir / "eval.json", summary.dump(2) + "\n");
  log_info("eval: " + std::to_string(result.metrics.utterances) + " utterances, ter " + format_number(result.metrics.ter));
  return result;
}

SeparateResult cmd_separate(const SeparateRequest& req) {
  const dsp::Waveform mix = read_stacked(req.mixture);
  if (mix.channels() < 2)
    throw UnsupportedError("separate: beamforming needs a multi-channel mixture, got " + std::to_string(mix.channels()) +
                           " channel");
  const auto x = dsp::stft(mix);
  std::vector<dsp::Waveform> refs;
  for (const auto& r : req.references) {
    refs.push_back(dsp::read_wav(r));
    if (refs.back().length() != mix.length()) refs.back() = refs.back().resized(mix.length());
  }

  frontend::PsdSet psds;
  std::vector<double> u;
  std::size_t speakers = 0;
  std::string mode;
  if (req.checkpoint) {
    auto loaded = training::load_checkpoint(req.checkpoint->string());
    const auto& model = loaded.model;
    if (!model.frontend) throw UnsupportedError("separate: checkpoint has no beamforming frontend");
    const auto masks = frontend::mask_net(x, model.frontend->mask);
    psds = frontend::estimate_psd(x, masks);
    u = frontend::select_reference(psds, model.frontend->config.reference, &model.frontend->scorer);
    speakers = masks.speakers();
    mode = "checkpoint";
  } else {
    if (refs.size() < 1 || !req.noise) throw ConfigError("separate: oracle masks need --reference per speaker and --noise");
    std::vector<dsp::ComplexSpectrogram> comps;
    dsp::Waveform noise = dsp::read_wav(*req.noise).resized(mix.length());
    comps.push_back(dsp::stft(noise));
    for (const auto& r : refs) {
      if (r.channels() != mix.channels())
        throw DataError("separate: oracle masks need C-channel references matching the mixture");
      comps.push_back(dsp::stft(r));
    }
    psds = frontend::estimate_psd(x, frontend::oracle_masks(comps));
    u = frontend::select_reference(psds, {});
    speakers = refs.size();
    mode = "oracle";
  }

  ensure_dir(req.out_dir);
  SeparateResult result;
  std::vector<dsp::Waveform> outs;
  for (std::size_t j = 1; j <= speakers; ++j) {
    const auto g = frontend::mvdr_filter(psds, j, u);
    outs.push_back(dsp::istft(frontend::beamform(x, g), mix.sample_rate()).resized(mix.length()));
    result.outputs.push_back(req.out_dir / ("sep" + std::to_string(j - 1) + ".wav"));
    dsp::write_wav(result.outputs.back(), outs.back());
  }

  json report = {{"mode", mode}, {"channels", mix.channels()}, {"speakers", speakers}};
  json rows = json::array();
  if (!refs.empty()) {
    if (refs.size() != speakers) throw DataError("separate: reference count does not match the speaker count");
    std::vector<std::vector<double>> cost(speakers, std::vector<double>(speakers));
    for (std::size_t j = 0; j < speakers; ++j)
      for (std::size_t k = 0; k < speakers; ++k)
        cost[j][k] = -dsp::si_snr(outs[j].channel(0), refs[k].channel(0));
    const auto perm = mode == "oracle" ? [&] {
      std::vector<std::size_t> id(speakers);
      for (std::size_t k = 0; k < speakers; ++k) id[k] = k;
      return id;
    }() : backend::pit_assign(cost);
    for (std::size_t j = 0; j < speakers; ++j) {
      const auto& ref = refs[perm[j]].channel(0);
      const double before = dsp::si_snr(mix.channel(0), ref);
      const double after = -cost[j][perm[j]];
      result.si_snr_mixture.push_back(before);
      result.si_snr_output.push_back(after);
      rows.push_back({{"output", result.outputs[j].filename().string()},
                      {"reference", perm[j]},
                      {"si_snr_mixture", before},
                      {"si_snr_output", after},
                      {"improvement", after - before}});
    }
  } else {
    for (const auto& o : result.outputs) rows.push_back({{"output", o.filename().string()}});
  }
  report["outputs"] = rows;
  write_text(req.out_dir / "report.json", report.dump(2) + "\n");
  return result;
}

DereverbResult cmd_dereverb(const fs::path& in, const fs::path& out, const dsp::WpeParams& params) {
  const dsp::Waveform w = dsp::read_wav(in);
  const auto s = dsp::stft(w);
  const auto r = dsp::wpe_detailed(s, params);
  const dsp::Waveform y = dsp::istft(r.output, w.sample_rate()).resized(w.length());
  if (out.has_parent_path()) ensure_dir(out.parent_path());
  dsp::write_wav(out, y);
  const dsp::StftParams sp = s.params();
  json side = {{"input", in.filename().string()},
               {"output", out.filename().string()},
               {"taps", params.taps},
               {"delay", params.delay},
               {"iterations", params.iterations},
               {"channels", w.channels()},
               {"samples", w.length()},
               {"sample_rate", w.sample_rate()},
               {"stft", {{"win", sp.win}, {"hop", sp.hop}, {"nfft", sp.nfft}}},
               {"objective", r.objective}};
  write_text(fs::path(out.string() + ".json"), side.dump(2) + "\n");
  return {r.objective};
}

}  // namespace msar::app
