#include "msar/numerics/params.hpp"

#include <cmath>

namespace msar::numerics {

void ParamList::append(const ParamList& other, const std::string& prefix) {
  for (const auto& item : other.items_) items_.push_back({prefix + item.name, item.tensor});
}

std::size_t ParamList::scalar_count() const {
  std::size_t n = 0;
  for (const auto& item : items_) n += item.tensor.size();
  return n;
}

const Tensor* ParamList::find(const std::string& name) const {
  for (const auto& item : items_)
    if (item.name == name) return &item.tensor;
  return nullptr;
}

Tensor uniform_param(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  t.set_requires_grad();
  return t;
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_param({fan_in, fan_out}, bound, rng);
}

Tensor constant_param(Shape shape, double value) {
  Tensor t(std::move(shape), value);
  t.set_requires_grad();
  return t;
}

}  // namespace msar::numerics
