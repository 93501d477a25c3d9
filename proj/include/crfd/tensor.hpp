#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace crfd {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorData {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  // True when this tensor is a grad leaf or was computed from one; set by the
  // tape so forward-only subgraphs record no backward rules.
  bool needs_grad = false;
};

// Dense f64 tensor, row-major, immutable after construction. Copying a
// Tensor copies a handle; the storage is shared and never mutated.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(d_->values.size()); }
  const std::vector<double>& values() const { return d_->values; }
  const double* data() const { return d_->values.data(); }
  double item() const;
  double at(std::int64_t flat) const { return d_->values[static_cast<size_t>(flat)]; }

  bool requires_grad() const { return d_->requires_grad; }
  bool needs_grad() const { return d_ && d_->needs_grad; }

  // Storage identity; used as the gradient key on a tape.
  const TensorData* id() const { return d_.get(); }

  bool has_nan() const;

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;
};

}  // namespace crfd
