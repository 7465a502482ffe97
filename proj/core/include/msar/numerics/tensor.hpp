#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace msar::numerics {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  // Gradient slot of a leaf tensor; empty until backward() deposits into it.
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
};

// Dense row-major real array in 64-bit precision.
//
// A Tensor is a handle: copies share storage, which is what lets the tape keep
// intermediate values alive and lets the optimizer update parameters in place.
// Use clone() for an independent value.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<double> values();
  std::span<const double> values() const;
  double* data() { return values().data(); }
  const double* data() const { return values().data(); }

  double item() const;
  double& operator[](std::size_t i) { return storage_->data[i]; }
  double operator[](std::size_t i) const { return storage_->data[i]; }
  // Row-major 2-D access.
  double& at(std::size_t r, std::size_t c) { return storage_->data[r * shape()[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return storage_->data[r * shape()[1] + c]; }

  bool requires_grad() const { return storage_ && storage_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const { return !storage_ || storage_->is_leaf; }

  bool has_grad() const { return storage_ && !storage_->grad.empty(); }
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Deep copy that is detached from any graph.
  Tensor clone() const;

  TensorStorage* storage() const { return storage_.get(); }
  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

 private:
  std::shared_ptr<TensorStorage> storage_;
};

// Permission mask for row-wise masked softmax: rows x cols, 1 = allowed.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<unsigned char> allowed;

  Mask() = default;
  Mask(std::size_t r, std::size_t c, bool fill) : rows(r), cols(c), allowed(r * c, fill ? 1 : 0) {}
  bool operator()(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool on) { allowed[r * cols + c] = on ? 1 : 0; }
};

}  // namespace msar::numerics
