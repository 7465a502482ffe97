#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

#include "msar/dsp/waveform.hpp"

namespace msar::dsp {

// Generator seeded from several 64-bit words through std::seed_seq.
std::mt19937_64 seeded_rng(std::initializer_list<std::uint64_t> parts);

// Voice of a synthetic talker. Token k is rendered as a harmonic tone at
// f0 + offsets[k] whose instantaneous frequency wanders by a smoothed random
// jitter, so the tone is not linearly predictable over tens of milliseconds.
struct SpeakerProfile {
  double f0 = 100.0;
  double harmonic_decay = 0.5;     // amplitude ratio between successive harmonics
  std::vector<double> offsets;     // one per token, Hz
  double token_ms = 100.0;
  double edge_ms = 10.0;           // raised-cosine ramp at each token edge
  std::size_t harmonics = 3;
  double jitter_hz = 20.0;         // rms frequency deviation of the fundamental
  double jitter_ms = 5.0;          // correlation time of the deviation
  std::uint64_t seed = 0;

  // Throws ConfigError when offsets repeat or the top harmonic reaches Nyquist.
  void validate(int sample_rate = kSampleRate) const;
};

std::size_t token_samples(const SpeakerProfile& p, int sample_rate = kSampleRate);

// `tokens` index into p.offsets.
Waveform synth_utterance(std::span<const std::size_t> tokens, const SpeakerProfile& p,
                         int sample_rate = kSampleRate);

enum class RoomMode { kAnechoic, kReverberant };

struct RoomSpec {
  RoomMode mode = RoomMode::kAnechoic;
  std::vector<std::vector<std::size_t>> delays;  // [source][channel], samples
  std::vector<std::vector<double>> decays;       // [source][channel]
  double t60 = 0.3;                              // seconds, reverberant mode
  double tail_gain = 0.05;                       // initial amplitude of the diffuse tail
  std::uint64_t seed = 0;

  std::size_t channels() const { return delays.empty() ? 0 : delays.front().size(); }
  void validate() const;
};

// Impulse response from source `source` to channel `channel`.
std::vector<double> room_impulse_response(const RoomSpec& room, std::size_t source, std::size_t channel,
                                          int sample_rate = kSampleRate);

// Anechoic output keeps the source length plus the largest delay; reverberant
// output is the full convolution with the longest response.
Waveform spatialize(const Waveform& src, const RoomSpec& room, std::size_t source_index);

// Sums equal-channel sources (zero-padding to the longest) and adds seeded
// white Gaussian noise scaled to 10 log10(P_mix / P_noise) = noise_snr_db.
// An infinite SNR disables the noise. The scaled noise is returned through
// `noise` when given.
Waveform mix(std::span<const Waveform> sources, double noise_snr_db, std::uint64_t seed, Waveform* noise = nullptr);

inline constexpr double kSiSnrClamp = 80.0;

// Scale-invariant SNR in dB between zero-meaned est and ref, clamped to +-80.
double si_snr(std::span<const double> est, std::span<const double> ref);

}  // namespace msar::dsp
