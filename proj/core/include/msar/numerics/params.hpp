#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "msar/numerics/tensor.hpp"

namespace msar::numerics {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Ordered, named view of a model's trainable tensors. Order is the
// serialisation order of checkpoints and the reduction order of gradients.
class ParamList {
 public:
  void add(std::string name, Tensor t) { items_.push_back({std::move(name), std::move(t)}); }
  void append(const ParamList& other, const std::string& prefix = "");
  const std::vector<NamedTensor>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t scalar_count() const;
  const Tensor* find(const std::string& name) const;

 private:
  std::vector<NamedTensor> items_;
};

// Glorot-uniform weights for a [fan_in x fan_out] matrix, marked trainable.
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);
// Uniform(-bound, bound) with an explicit shape, marked trainable.
Tensor uniform_param(Shape shape, double bound, std::mt19937_64& rng);
Tensor constant_param(Shape shape, double value);

}  // namespace msar::numerics
