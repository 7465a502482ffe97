#include "msar/training/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "msar/error.hpp"
#include "msar/log.hpp"

namespace msar::training {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[4] = {'M', 'S', 'A', 'R'};

class Writer {
 public:
  template <class T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void floats(const std::vector<float>& v) {
    pod<std::uint64_t>(v.size());
    raw(v.data(), v.size() * sizeof(float));
  }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& b, std::size_t end, std::string path) : b_(b), end_(end), path_(std::move(path)) {}
  template <class T>
  T pod() {
    T v;
    take(&v, sizeof(T));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<float> floats() {
    const auto n = pod<std::uint64_t>();
    need(n * sizeof(float));
    std::vector<float> v(n);
    take(v.data(), n * sizeof(float));
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw DataError("checkpoint " + path_ + ": truncated or corrupt");
  }
  void take(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, b_.data() + pos_, n);
    pos_ += n;
  }
  const std::vector<unsigned char>& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string path_;
};

std::vector<float> to_floats(std::span<const double> v) { return {v.begin(), v.end()}; }

}  // namespace

Checkpoint make_checkpoint(Model& model, const TrainingState* state) {
  Checkpoint c;
  c.config_json = model_config_json(model.config);
  c.config_digest = config_digest(model.config);
  const auto params = model.parameters();
  for (const auto& item : params.items()) c.params.push_back({item.name, item.tensor.shape(), to_floats(item.tensor.values())});
  if (state) {
    c.step = state->optimizer.step;
    c.epoch = state->epoch;
    if (state->optimizer.m.size() == params.size()) {
      for (const auto& m : state->optimizer.m) c.adam_m.push_back(to_floats(m));
      for (const auto& v : state->optimizer.v) c.adam_v.push_back(to_floats(v));
    }
  }
  for (auto& [name, ptr] : model.buffers()) c.buffers.emplace_back(name, *ptr);
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  Writer w;
  w.raw(kMagic, 4);
  w.pod<std::uint16_t>(c.version);
  w.str(c.config_json);
  w.pod<std::uint64_t>(c.config_digest);
  w.pod<std::uint64_t>(c.step);
  w.pod<std::uint64_t>(c.epoch);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(c.params.size()));
  for (const auto& t : c.params) {
    w.str(t.name);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.pod<std::uint64_t>(d);
    w.floats(t.values);
  }
  w.pod<std::uint8_t>(c.adam_m.empty() ? 0 : 1);
  for (std::size_t i = 0; i < c.adam_m.size(); ++i) {
    w.floats(c.adam_m[i]);
    w.floats(c.adam_v[i]);
  }
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(c.buffers.size()));
  for (const auto& [name, values] : c.buffers) {
    w.str(name);
    w.pod<std::uint64_t>(values.size());
    w.raw(values.data(), values.size() * sizeof(double));
  }
  w.pod<std::uint64_t>(fnv1a64(w.bytes()));

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp + " to " + path + ": " + ec.message());
}

void save_checkpoint(Model& model, const TrainingState& state, const std::string& path) {
  save_checkpoint(make_checkpoint(model, &state), path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw DataError("checkpoint " + path + ": not an MSAR checkpoint (bad magic)");
  std::uint16_t version;
  std::memcpy(&version, bytes.data() + 4, 2);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint " + path + ": format version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  if (bytes.size() < 14) throw DataError("checkpoint " + path + ": truncated or corrupt");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t digest;
  std::memcpy(&digest, bytes.data() + body, 8);
  if (fnv1a64({bytes.data(), body}) != digest) throw DataError("checkpoint " + path + ": truncated or corrupt (digest mismatch)");

  Reader r(bytes, body, path);
  r.pod<std::uint32_t>();
  r.pod<std::uint16_t>();
  Checkpoint c;
  c.version = version;
  c.config_json = r.str();
  c.config_digest = r.pod<std::uint64_t>();
  c.step = r.pod<std::uint64_t>();
  c.epoch = r.pod<std::uint64_t>();
  const auto n = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    StoredTensor t;
    t.name = r.str();
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) throw DataError("checkpoint " + path + ": implausible tensor rank");
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.pod<std::uint64_t>());
    t.values = r.floats();
    if (t.values.size() != numerics::element_count(t.shape))
      throw DataError("checkpoint " + path + ": value count of " + t.name + " disagrees with its shape");
    c.params.push_back(std::move(t));
  }
  if (r.pod<std::uint8_t>() != 0) {
    for (std::uint32_t i = 0; i < n; ++i) {
      c.adam_m.push_back(r.floats());
      c.adam_v.push_back(r.floats());
    }
  }
  const auto nb = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < nb; ++i) {
    std::string name = r.str();
    const auto len = r.pod<std::uint64_t>();
    std::vector<double> v(len);
    for (auto& x : v) x = r.pod<double>();
    c.buffers.emplace_back(std::move(name), std::move(v));
  }
  if (r.pos() != body) throw DataError("checkpoint " + path + ": trailing bytes");
  return c;
}

void apply_checkpoint(const Checkpoint& c, Model& model, TrainingState* state, bool allow_config_mismatch) {
  const std::uint64_t expected = config_digest(model.config);
  if (c.config_digest != expected) {
    if (!allow_config_mismatch)
      throw ConfigError("checkpoint config digest does not match the model config (pass the override flag to load anyway)");
    log_warning("checkpoint config digest differs from the model config; loading by name and shape");
  }
  const auto params = model.parameters();
  const auto& items = params.items();
  if (items.size() != c.params.size())
    throw ConfigError("checkpoint holds " + std::to_string(c.params.size()) + " parameters, model has " +
                      std::to_string(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].name != c.params[i].name || items[i].tensor.shape() != c.params[i].shape)
      throw ConfigError("checkpoint parameter " + c.params[i].name + " " + numerics::shape_string(c.params[i].shape) +
                        " does not match model parameter " + items[i].name + " " +
                        numerics::shape_string(items[i].tensor.shape()));
  }
  auto bufs = model.buffers();
  for (const auto& [name, values] : c.buffers) {
    bool found = false;
    for (const auto& b : bufs) found = found || b.first == name;
    if (!found) throw ConfigError("checkpoint buffer " + name + " is unknown to the model");
  }
  const bool with_moments = state && !c.adam_m.empty();
  if (with_moments)
    for (std::size_t i = 0; i < items.size(); ++i)
      if (c.adam_m[i].size() != items[i].tensor.size() || c.adam_v[i].size() != items[i].tensor.size())
        throw DataError("checkpoint: optimizer moments of " + items[i].name + " have the wrong size");

  for (std::size_t i = 0; i < items.size(); ++i) {
    numerics::Tensor t = items[i].tensor;
    auto dst = t.values();
    std::copy(c.params[i].values.begin(), c.params[i].values.end(), dst.begin());
  }
  for (const auto& [name, values] : c.buffers)
    for (auto& b : bufs)
      if (b.first == name) *b.second = values;
  model.set_feature_stats(model.feature_stats);
  if (state) {
    state->epoch = c.epoch;
    state->optimizer = OptimizerState::for_params(params, state->optimizer.config);
    state->optimizer.step = c.step;
    if (with_moments)
      for (std::size_t i = 0; i < items.size(); ++i) {
        state->optimizer.m[i].assign(c.adam_m[i].begin(), c.adam_m[i].end());
        state->optimizer.v[i].assign(c.adam_v[i].begin(), c.adam_v[i].end());
      }
  }
}

LoadedModel load_checkpoint(const std::string& path) {
  const Checkpoint c = read_checkpoint(path);
  LoadedModel out{Model::init(parse_model_config(c.config_json), 0), {}};
  apply_checkpoint(c, out.model, &out.state);
  return out;
}

}  // namespace msar::training
