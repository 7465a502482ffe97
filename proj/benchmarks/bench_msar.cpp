#include <benchmark/benchmark.h>

#include <random>

#include "msar/app/config.hpp"
#include "msar/attention/attention.hpp"
#include "msar/backend/losses.hpp"
#include "msar/dsp/scenario.hpp"
#include "msar/dsp/stft.hpp"
#include "msar/dsp/wpe.hpp"
#include "msar/frontend/beamformer.hpp"
#include "msar/frontend/frontend.hpp"
#include "msar/numerics/graph.hpp"
#include "msar/training/data.hpp"
#include "msar/training/model.hpp"

using namespace msar;
using numerics::Tensor;

namespace {

dsp::Scenario scenario(std::size_t channels, dsp::RoomMode mode = dsp::RoomMode::kAnechoic) {
  dsp::ScenarioConfig cfg;
  cfg.channels = channels;
  cfg.mode = mode;
  cfg.min_tokens = 5;
  cfg.max_tokens = 5;
  return dsp::make_scenario(cfg, 17);
}

Tensor random_tensor(numerics::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Tensor t(shape);
  for (auto& v : t.values()) v = g(rng);
  return t;
}

void BM_Stft(benchmark::State& state) {
  const auto sc = scenario(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(dsp::stft(sc.mixture));
}
BENCHMARK(BM_Stft)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_Wpe(benchmark::State& state) {
  const auto x = dsp::stft(scenario(static_cast<std::size_t>(state.range(0)), dsp::RoomMode::kReverberant).mixture);
  for (auto _ : state) benchmark::DoNotOptimize(dsp::wpe(x));
}
BENCHMARK(BM_Wpe)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_OracleMvdr(benchmark::State& state) {
  const auto sc = scenario(2);
  const auto x = dsp::stft(sc.mixture);
  std::vector<dsp::ComplexSpectrogram> parts{dsp::stft(sc.noise)};
  for (const auto& im : sc.images) parts.push_back(dsp::stft(im));
  const auto masks = frontend::oracle_masks(parts);
  const std::vector<double> u{1.0, 0.0};
  for (auto _ : state) {
    const auto psds = frontend::estimate_psd(x, masks);
    benchmark::DoNotOptimize(frontend::beamform(x, frontend::mvdr_filter(psds, 1, u)));
  }
}
BENCHMARK(BM_OracleMvdr)->Unit(benchmark::kMillisecond);

void BM_WindowedEncoderLayer(benchmark::State& state) {
  attention::AttentionConfig cfg{32, 4, 128, attention::Window{14, 15}};
  std::mt19937_64 rng(3);
  const auto p = attention::EncoderLayerParams::init(cfg, rng);
  const Tensor x = random_tensor({static_cast<std::size_t>(state.range(0)), 32}, 5);
  numerics::NoGradScope ng;
  for (auto _ : state) benchmark::DoNotOptimize(attention::encoder_layer(x, p, cfg.window));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_WindowedEncoderLayer)->RangeMultiplier(2)->Range(64, 512)->Complexity()->Unit(benchmark::kMicrosecond);

void BM_CtcForwardBackward(benchmark::State& state) {
  const std::size_t t = static_cast<std::size_t>(state.range(0));
  Tensor z = random_tensor({t, 12}, 9);
  z.set_requires_grad();
  const backend::TokenSequence ref{1, 4, 4, 7, 2, 9};
  for (auto _ : state) {
    numerics::DiffGraph graph;
    numerics::GraphScope scope(graph);
    const Tensor loss = backend::ctc_loss(z, ref, 0);
    graph.backward(loss);
    benchmark::DoNotOptimize(graph.grads());
  }
}
BENCHMARK(BM_CtcForwardBackward)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_UtteranceLoss(benchmark::State& state) {
  const bool multi = state.range(0) == 1;
  const auto exp = app::parse_experiment(multi ? R"({"data": {"channels": 2},
      "model": {"backend": {"d_att": 32, "heads": 4, "d_ff": 128, "sd_layers": 0, "rec_layers": 4},
                "frontend": {"d_att": 32, "heads": 4, "d_ff": 128, "layers": 2}}})"
                                               : R"({"model": {"backend": {"d_att": 32, "heads": 4, "d_ff": 128}}})");
  auto model = training::Model::init(exp.model, 1);
  std::vector<training::Utterance> data{training::make_utterance("b", scenario(multi ? 2 : 1))};
  training::fit_statistics(model, data);
  if (!multi) training::attach_features(model, data);
  for (auto _ : state) {
    numerics::DiffGraph graph;
    numerics::GraphScope scope(graph);
    const auto loss = training::utterance_loss(model, data[0]);
    graph.backward(loss.joint);
    benchmark::DoNotOptimize(graph.grads());
  }
  state.SetLabel(multi ? "multi-channel" : "single-channel");
}
BENCHMARK(BM_UtteranceLoss)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
