#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "crfd/tensor.hpp"

namespace crfd {

/// Reverse-mode autodiff tape. Operations record their inputs, output and a
/// backward rule; backward() runs the rules in reverse topological order
/// (which is simply recording order). A tape is single-owner during
/// recording; independent tapes may live on different threads.
class Tape {
 public:
  Tape() = default;
  /// recording=false skips backward-rule capture (forward-only evaluation).
  explicit Tape(bool recording) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  // Elementwise binary ops with trailing-dimension broadcasting.
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor div(const Tensor& a, const Tensor& b);

  Tensor add_scalar(const Tensor& a, double s);
  Tensor mul_scalar(const Tensor& a, double s);

  // Elementwise nonlinearities.
  Tensor relu(const Tensor& x);
  Tensor leaky_relu(const Tensor& x, double slope);
  // Gradient passes through inside [lo, hi] and is zero outside.
  Tensor clamp(const Tensor& x, double lo, double hi);
  Tensor exp(const Tensor& x);
  Tensor log(const Tensor& x);  // rejects non-positive inputs
  Tensor sin(const Tensor& x);
  Tensor cos(const Tensor& x);

  Tensor matmul(const Tensor& a, const Tensor& b);
  // x.W^T + b; x may be [N,in] or [in].
  Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

  // Stride-2 4x4 conv with zero padding 1; halves even spatial dims.
  Tensor conv2d_s2(const Tensor& x, const Tensor& kernels, const Tensor& bias);
  // Stride-2 4^3 transposed conv with padding 1; doubles spatial dims.
  Tensor conv_transpose3d_s2(const Tensor& x, const Tensor& kernels, const Tensor& bias);

  // Trilinear sampling of grid [F,D,D,D] at points [N,3] in [-1,1]^3
  // (align-corners convention; out-of-range points clamp to the boundary).
  // Differentiable w.r.t. both the grid values and the point coordinates.
  Tensor grid_sample_trilinear(const Tensor& grid, const Tensor& points);
  // Same, restricted to channels [c0, c1).
  Tensor grid_sample_trilinear(const Tensor& grid, const Tensor& points, int c0, int c1);

  // Reductions; empty axes list reduces everything to a scalar.
  Tensor reduce_sum(const Tensor& x, const std::vector<int>& axes = {});
  Tensor reduce_mean(const Tensor& x, const std::vector<int>& axes = {});

  // y_i = sum_{j<i} x_j along the last axis.
  Tensor cumsum_exclusive_last(const Tensor& x);

  Tensor concat(const std::vector<Tensor>& parts, int axis);
  Tensor reshape(const Tensor& x, Shape shape);
  Tensor slice(const Tensor& x, int axis, int start, int len);
  Tensor transpose2d(const Tensor& x);
  // [C] -> [n,C] by repetition.
  Tensor expand_rows(const Tensor& x, int n);
  // [C,N] -> [C]; ties route the gradient to the first max index.
  Tensor maxpool_over_points(const Tensor& x);

  // Positional encoding: [N,d] -> [N,2*L*d], pairs (sin,cos) of 2^k*pi*x
  // per coordinate, frequency-inner layout.
  Tensor positional_encoding(const Tensor& x, int n_freq);

  /// Reverse sweep from a scalar root. Gradients accumulate additively
  /// across fan-out and are retrievable with grad() until the next backward.
  void backward(const Tensor& root);

  bool has_grad(const Tensor& t) const;
  /// Gradient of the last backward() w.r.t. t; zeros of t's shape when t did
  /// not participate.
  Tensor grad(const Tensor& t) const;

  size_t node_count() const { return nodes_.size(); }

  /// Name of the first recorded output containing a NaN, or empty string.
  std::string first_nan_node() const;

 private:
  friend struct TapeOps;
  struct Node {
    std::string op;
    Tensor out;
    std::function<void(Tape&)> backward;
  };

  Tensor make_out(Shape shape, std::vector<double> values,
                  const std::initializer_list<const Tensor*>& inputs);
  void record(std::string op, const Tensor& out, std::function<void(Tape&)> fn);

  std::vector<double>* grad_ptr(const Tensor& t);
  std::vector<double>& grad_buf(const Tensor& t);

  std::vector<Node> nodes_;
  std::unordered_map<const TensorData*, std::vector<double>> grads_;
  bool recording_ = true;
};

}  // namespace crfd
