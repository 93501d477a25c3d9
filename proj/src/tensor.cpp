#include "crfd/tensor.hpp"

#include <cmath>
#include <sstream>

namespace crfd {

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("tensor shape entries must be positive, got " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto d = std::make_shared<TensorData>();
  d->values.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  d->shape = std::move(shape);
  d->requires_grad = requires_grad;
  d->needs_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto d = std::make_shared<TensorData>();
  d->values.assign(static_cast<size_t>(shape_numel(shape)), value);
  d->shape = std::move(shape);
  d->requires_grad = requires_grad;
  d->needs_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
    throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->values = std::move(values);
  d->requires_grad = requires_grad;
  d->needs_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() requires a single-element tensor, shape is " + shape_str(shape()));
  return d_->values[0];
}

bool Tensor::has_nan() const {
  for (double v : d_->values)
    if (std::isnan(v)) return true;
  return false;
}

}  // namespace crfd
