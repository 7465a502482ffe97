#include "msar/numerics/tensor.hpp"

#include <sstream>

#include "msar/error.hpp"

namespace msar::numerics {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : storage_(std::make_shared<TensorStorage>()) {
  storage_->data.assign(element_count(shape), fill);
  storage_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : storage_(std::make_shared<TensorStorage>()) {
  if (element_count(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  storage_->shape = std::move(shape);
  storage_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

const Shape& Tensor::shape() const {
  if (!storage_) throw ContractError("use of an undefined tensor");
  return storage_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw IndexError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::size() const { return storage_ ? storage_->data.size() : 0; }

std::span<double> Tensor::values() {
  if (!storage_) throw ContractError("use of an undefined tensor");
  return storage_->data;
}

std::span<const double> Tensor::values() const {
  if (!storage_) throw ContractError("use of an undefined tensor");
  return storage_->data;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_string(shape()));
  return storage_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (!storage_) throw ContractError("use of an undefined tensor");
  storage_->requires_grad = on;
  return *this;
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return storage_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!storage_) throw ContractError("use of an undefined tensor");
  if (storage_->grad.size() != storage_->data.size()) storage_->grad.assign(storage_->data.size(), 0.0);
  return storage_->grad;
}

void Tensor::zero_grad() {
  if (storage_) storage_->grad.clear();
}

Tensor Tensor::clone() const {
  Tensor out(shape(), storage_->data);
  return out;
}

}  // namespace msar::numerics
