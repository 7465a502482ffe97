#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "msar/dsp/synth.hpp"

namespace msar::dsp {

// Recipe for one synthetic multi-talker recording.
struct ScenarioConfig {
  std::size_t speakers = 2;
  std::size_t channels = 1;
  std::size_t vocab = 10;  // token ids 0..vocab-1
  std::size_t min_tokens = 3;
  std::size_t max_tokens = 6;
  RoomMode mode = RoomMode::kAnechoic;
  double t60_min = 0.2;
  double t60_max = 0.4;
  double tail_gain = 0.05;
  std::size_t max_delay = 8;  // samples
  double noise_snr_db = 30.0;

  void validate() const;
};

// Fixed voices. Voices 0 and 1 occupy disjoint bands (every harmonic of voice
// 0 lies below 1.5 kHz, every harmonic of voice 1 above 1.9 kHz); voice 2
// sits in between and overlaps both.
SpeakerProfile voice(std::size_t index, std::size_t vocab);
inline constexpr std::size_t kMaxSpeakers = 3;

struct Scenario {
  std::vector<std::vector<std::size_t>> tokens;  // [speaker]
  RoomSpec room;
  std::vector<Waveform> images;  // [speaker], C channels, padded to the mixture length
  Waveform noise;
  Waveform mixture;
};

Scenario make_scenario(const ScenarioConfig& cfg, std::uint64_t seed);

}  // namespace msar::dsp
