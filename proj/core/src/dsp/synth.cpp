#include "msar/dsp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "msar/error.hpp"
#include "msar/dsp/stft.hpp"

namespace msar::dsp {
std::mt19937_64 seeded_rng(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (auto p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

void SpeakerProfile::validate(int sample_rate) const {
  if (!(f0 > 0.0)) throw ConfigError("speaker profile: f0 must be positive");
  if (harmonics == 0) throw ConfigError("speaker profile: need at least one harmonic");
  if (offsets.empty()) throw ConfigError("speaker profile: no token offsets");
  if (std::set<double>(offsets.begin(), offsets.end()).size() != offsets.size())
    throw ConfigError("speaker profile: token offsets must be distinct");
  const double top = f0 + *std::max_element(offsets.begin(), offsets.end());
  if (!(top < sample_rate / 2.0 / static_cast<double>(harmonics)))
    throw ConfigError("speaker profile: f0 + max offset must stay below Nyquist / harmonics");
  if (!(token_ms > 0.0) || edge_ms < 0.0 || 2.0 * edge_ms > token_ms)
    throw ConfigError("speaker profile: token duration must exceed both edge ramps");
  if (jitter_hz < 0.0 || !(jitter_ms > 0.0)) throw ConfigError("speaker profile: invalid jitter");
}

std::size_t token_samples(const SpeakerProfile& p, int sample_rate) {
  return static_cast<std::size_t>(std::lround(p.token_ms * sample_rate / 1000.0));
}

Waveform synth_utterance(std::span<const std::size_t> tokens, const SpeakerProfile& p, int sample_rate) {
  if (tokens.empty()) throw ContractError("synth_utterance: empty token sequence");
  p.validate(sample_rate);
  for (auto t : tokens)
    if (t >= p.offsets.size()) throw VocabularyError("synth_utterance: unknown token " + std::to_string(t));

  const std::size_t per_token = token_samples(p, sample_rate);
  const std::size_t edge = static_cast<std::size_t>(std::lround(p.edge_ms * sample_rate / 1000.0));
  const double a = std::exp(-1000.0 / (p.jitter_ms * sample_rate));
  const double innovation = std::sqrt(1.0 - a * a);
  auto rng = seeded_rng({p.seed, static_cast<std::uint64_t>(std::llround(p.f0 * 1000.0))});
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> uniform(0.0, 2.0 * std::numbers::pi);

  std::vector<double> out(tokens.size() * per_token, 0.0);
  std::vector<double> phase(p.harmonics);
  double wander = gauss(rng);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (auto& ph : phase) ph = uniform(rng);
    const double base = p.f0 + p.offsets[tokens[i]];
    for (std::size_t n = 0; n < per_token; ++n) {
      wander = a * wander + innovation * gauss(rng);
      const double freq = base + p.jitter_hz * wander;
      double env = 1.0;
      if (n < edge) env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(n) / static_cast<double>(edge));
      const std::size_t from_end = per_token - 1 - n;
      if (from_end < edge)
        env = std::min(env, 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(from_end) / static_cast<double>(edge)));
      double v = 0.0, amp = 1.0;
      for (std::size_t h = 0; h < p.harmonics; ++h) {
        v += amp * std::sin(phase[h]);
        phase[h] += 2.0 * std::numbers::pi * static_cast<double>(h + 1) * freq / sample_rate;
        amp *= p.harmonic_decay;
      }
      out[i * per_token + n] = env * v;
    }
  }
  return Waveform::mono(std::move(out), sample_rate);
}

// --- rooms ----------------------------------------------------------------

void RoomSpec::validate() const {
  if (delays.empty()) throw ConfigError("room: no sources");
  if (decays.size() != delays.size()) throw ConfigError("room: delays and decays disagree on source count");
  const std::size_t c = delays.front().size();
  if (c == 0) throw ConfigError("room: no channels");
  for (std::size_t s = 0; s < delays.size(); ++s) {
    if (delays[s].size() != c || decays[s].size() != c)
      throw ConfigError("room: source " + std::to_string(s) + " is missing channel entries");
    for (double d : decays[s])
      if (!(d > 0.0 && d <= 1.0)) throw ConfigError("room: decays must lie in (0, 1]");
  }
  if (mode == RoomMode::kReverberant && !(t60 >= 0.2 && t60 <= 0.6))
    throw ConfigError("room: t60 must lie in [0.2, 0.6] s");
  if (tail_gain < 0.0) throw ConfigError("room: negative tail gain");
}

std::vector<double> room_impulse_response(const RoomSpec& room, std::size_t source, std::size_t channel,
                                          int sample_rate) {
  room.validate();
  if (source >= room.delays.size() || channel >= room.delays[source].size())
    throw ConfigError("room: no entry for source " + std::to_string(source) + ", channel " + std::to_string(channel));
  const std::size_t delay = room.delays[source][channel];
  const double decay = room.decays[source][channel];
  if (room.mode == RoomMode::kAnechoic) {
    std::vector<double> h(delay + 1, 0.0);
    h[delay] = decay;
    return h;
  }
  const double t60_samples = room.t60 * sample_rate;
  const std::size_t tail = static_cast<std::size_t>(std::ceil(t60_samples));
  std::vector<double> h(delay + tail + 1, 0.0);
  h[delay] = decay;
  auto rng = seeded_rng({room.seed, source, channel});
  std::normal_distribution<double> gauss;
  for (std::size_t k = 1; k <= tail; ++k) {
    const double envelope = std::pow(10.0, -3.0 * static_cast<double>(k) / t60_samples);
    h[delay + k] = decay * room.tail_gain * envelope * gauss(rng);
  }
  return h;
}

Waveform spatialize(const Waveform& src, const RoomSpec& room, std::size_t source_index) {
  if (src.channels() != 1) throw ContractError("spatialize: source must be mono");
  room.validate();
  if (source_index >= room.delays.size())
    throw ConfigError("room: no entry for source " + std::to_string(source_index));
  const std::size_t channels = room.channels();
  std::vector<std::vector<double>> responses(channels);
  std::size_t longest = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    responses[c] = room_impulse_response(room, source_index, c, src.sample_rate());
    longest = std::max(longest, responses[c].size());
  }
  Waveform out(channels, src.length() + longest - 1, src.sample_rate());
  for (std::size_t c = 0; c < channels; ++c) {
    auto y = out.channel(c);
    if (room.mode == RoomMode::kAnechoic) {
      const std::size_t d = room.delays[source_index][c];
      const double g = room.decays[source_index][c];
      auto x = src.channel(0);
      for (std::size_t n = 0; n < x.size(); ++n) y[n + d] = g * x[n];
    } else {
      auto full = convolve(src.channel(0), responses[c]);
      std::copy(full.begin(), full.end(), y.begin());
    }
  }
  return out;
}

Waveform mix(std::span<const Waveform> sources, double noise_snr_db, std::uint64_t seed, Waveform* noise) {
  if (sources.empty()) throw ContractError("mix: empty source list");
  const std::size_t channels = sources.front().channels();
  std::size_t length = 0;
  for (const auto& s : sources) {
    if (s.channels() != channels) throw ShapeError("mix: sources differ in channel count");
    length = std::max(length, s.length());
  }
  Waveform out(channels, length, sources.front().sample_rate());
  for (const auto& s : sources)
    for (std::size_t c = 0; c < channels; ++c) {
      auto x = s.channel(c);
      auto y = out.channel(c);
      for (std::size_t n = 0; n < x.size(); ++n) y[n] += x[n];
    }

  Waveform n(channels, length, out.sample_rate());
  if (std::isfinite(noise_snr_db)) {
    auto rng = seeded_rng({seed, 0x6e6f697365ULL});
    std::normal_distribution<double> gauss;
    for (auto& v : n.samples()) v = gauss(rng);
    const double target = power(out) / std::pow(10.0, noise_snr_db / 10.0);
    const double raw = power(n);
    const double g = raw > 0.0 ? std::sqrt(target / raw) : 0.0;
    for (std::size_t i = 0; i < n.samples().size(); ++i) {
      n.samples()[i] *= g;
      out.samples()[i] += n.samples()[i];
    }
  } else if (noise_snr_db < 0.0) {
    throw ConfigError("mix: noise SNR of -inf is not allowed");
  }
  if (noise) *noise = std::move(n);
  return out;
}

double si_snr(std::span<const double> est, std::span<const double> ref) {
  if (est.size() != ref.size()) throw ContractError("si_snr: length mismatch");
  if (est.empty()) throw MetricError("si_snr: empty signals");
  const double n = static_cast<double>(est.size());
  double me = 0.0, mr = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    me += est[i];
    mr += ref[i];
  }
  me /= n;
  mr /= n;
  double dot = 0.0, rr = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    dot += (est[i] - me) * (ref[i] - mr);
    rr += (ref[i] - mr) * (ref[i] - mr);
  }
  if (!(rr > 0.0)) throw MetricError("si_snr: reference has no energy");
  const double alpha = dot / rr;
  double target = 0.0, resid = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double s = alpha * (ref[i] - mr);
    const double e = (est[i] - me) - s;
    target += s * s;
    resid += e * e;
  }
  if (resid <= 0.0) return target > 0.0 ? kSiSnrClamp : -kSiSnrClamp;
  if (target <= 0.0) return -kSiSnrClamp;
  return std::clamp(10.0 * std::log10(target / resid), -kSiSnrClamp, kSiSnrClamp);
}

}  // namespace msar::dsp
