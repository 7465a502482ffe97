#include "msar/dsp/waveform.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "msar/error.hpp"

namespace msar::dsp {

Waveform::Waveform(std::size_t channels, std::size_t length, int sample_rate)
    : sample_rate_(sample_rate), channels_(channels), length_(length), samples_(channels * length, 0.0) {}

Waveform Waveform::mono(std::vector<double> samples, int sample_rate) {
  Waveform w;
  w.sample_rate_ = sample_rate;
  w.channels_ = 1;
  w.length_ = samples.size();
  w.samples_ = std::move(samples);
  return w;
}

Waveform Waveform::select_channel(std::size_t c) const {
  if (c >= channels_) throw IndexError("select_channel: channel " + std::to_string(c) + " out of range");
  auto ch = channel(c);
  return mono({ch.begin(), ch.end()}, sample_rate_);
}

Waveform Waveform::resized(std::size_t length) const {
  Waveform out(channels_, length, sample_rate_);
  const std::size_t n = std::min(length, length_);
  for (std::size_t c = 0; c < channels_; ++c) std::copy_n(channel(c).begin(), n, out.channel(c).begin());
  return out;
}

Waveform Waveform::stack(std::span<const Waveform> parts) {
  if (parts.empty()) throw ContractError("Waveform::stack: no parts");
  std::size_t channels = 0;
  for (const auto& p : parts) {
    if (p.length() != parts[0].length()) throw ShapeError("Waveform::stack: lengths differ");
    channels += p.channels();
  }
  Waveform out(channels, parts[0].length(), parts[0].sample_rate());
  std::size_t c = 0;
  for (const auto& p : parts)
    for (std::size_t k = 0; k < p.channels(); ++k, ++c) std::ranges::copy(p.channel(k), out.channel(c).begin());
  return out;
}

double power(const Waveform& w) {
  if (w.samples().empty()) return 0.0;
  double e = 0.0;
  for (double v : w.samples()) e += v * v;
  return e / static_cast<double>(w.samples().size());
}

// --- WAV ------------------------------------------------------------------

namespace {

constexpr std::uint16_t kPcm = 1;
constexpr std::uint16_t kFloat = 3;
constexpr std::uint16_t kExtensible = 0xFFFE;

std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
std::uint16_t le16(const unsigned char* p) { return std::uint16_t(p[0] | p[1] << 8); }

void put32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
void put16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v));
  b.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto bad = [&](const std::string& why) { return IoError(path.string() + ": " + why); };
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw bad("not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* chunk = buf.data() + pos;
    const std::size_t size = le32(chunk + 4);
    if (pos + 8 + size > buf.size()) throw bad("truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw bad("short fmt chunk");
      format = le16(chunk + 8);
      channels = le16(chunk + 10);
      rate = le32(chunk + 12);
      bits = le16(chunk + 22);
      if (format == kExtensible) {
        if (size < 40) throw bad("short extensible fmt chunk");
        format = le16(chunk + 8 + 24);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = size;
    }
    pos += 8 + size + (size & 1);
  }
  if (channels == 0 || data == nullptr) throw bad("missing fmt or data chunk");
  const bool supported = (format == kPcm && (bits == 16 || bits == 32)) || (format == kFloat && (bits == 32 || bits == 64));
  if (!supported) throw bad("unsupported sample format " + std::to_string(format) + "/" + std::to_string(bits));

  const std::size_t width = bits / 8;
  const std::size_t frames = data_size / (width * channels);
  if (frames == 0) throw bad("no samples");
  Waveform w(channels, frames, static_cast<int>(rate));
  for (std::size_t n = 0; n < frames; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (n * channels + c) * width;
      double v = 0.0;
      if (format == kPcm && bits == 16) {
        v = static_cast<std::int16_t>(le16(p)) / 32768.0;
      } else if (format == kPcm) {
        v = static_cast<std::int32_t>(le32(p)) / 2147483648.0;
      } else if (bits == 32) {
        std::uint32_t u = le32(p);
        float f;
        std::memcpy(&f, &u, 4);
        v = f;
      } else {
        std::uint64_t u = std::uint64_t(le32(p)) | std::uint64_t(le32(p + 4)) << 32;
        std::memcpy(&v, &u, 8);
      }
      if (!std::isfinite(v)) throw bad("non-finite sample");
      w.at(c, n) = v;
    }
  }
  return w;
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  if (w.empty()) throw ContractError("write_wav: empty waveform");
  const std::uint32_t data_size = static_cast<std::uint32_t>(w.length() * w.channels() * 4);
  std::vector<unsigned char> b;
  b.reserve(44 + data_size);
  for (char ch : std::string("RIFF")) b.push_back(static_cast<unsigned char>(ch));
  put32(b, 36 + data_size);
  for (char ch : std::string("WAVEfmt ")) b.push_back(static_cast<unsigned char>(ch));
  put32(b, 16);
  put16(b, kFloat);
  put16(b, static_cast<std::uint16_t>(w.channels()));
  put32(b, static_cast<std::uint32_t>(w.sample_rate()));
  put32(b, static_cast<std::uint32_t>(w.sample_rate() * w.channels() * 4));
  put16(b, static_cast<std::uint16_t>(w.channels() * 4));
  put16(b, 32);
  for (char ch : std::string("data")) b.push_back(static_cast<unsigned char>(ch));
  put32(b, data_size);
  for (std::size_t n = 0; n < w.length(); ++n) {
    for (std::size_t c = 0; c < w.channels(); ++c) {
      const float f = static_cast<float>(w.at(c, n));
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      put32(b, u);
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace msar::dsp
