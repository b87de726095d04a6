#pragma once

// Dense 64-bit tensors with reverse-mode automatic differentiation.
//
// Every op allocates a fresh row-major result; nothing aliases. Results that
// depend on a tensor requiring gradients are recorded with a monotonically
// increasing node id, so sorting reachable nodes by id replays the tape in
// reverse topological order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace monalab {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return full(shape, 0.0, requires_grad);
  }
  static Tensor ones(const Shape& shape, bool requires_grad = false) {
    return full(shape, 1.0, requires_grad);
  }
  static Tensor from_data(const Shape& shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t extent(std::size_t axis) const { return shape().at(axis); }

  std::span<const double> data() const;
  // Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void set_grad(std::vector<double> values);
  void clear_grad();

  std::uint64_t node_id() const;

  // Value copy cut from the tape.
  Tensor detach() const;

  // Reverse pass from a single-element tensor; gradients accumulate.
  void backward() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;

  friend struct TensorAccess;
};

void backward(const Tensor& loss);

// Gradient function of a recorded op. `grad_out` has the output's extent;
// `input_grads[i]` is the accumulation buffer for input i, or nullptr when
// that input does not need a gradient.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<double* const> input_grads)>;

// Builds an op result. Records a tape node only when some input requires
// gradients and grad mode is enabled.
Tensor make_result(const Shape& shape, std::vector<double> data, std::vector<Tensor> inputs,
                   BackwardFn backward);

// Disables recording within a scope (evaluation, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// ---- primitive ops -------------------------------------------------------

// Elementwise with broadcasting over leading axes: the smaller operand's
// shape (leading unit extents stripped) must be a suffix of the larger one.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);

// Multiplication by a constant.
Tensor scale(const Tensor& x, double factor);
// Multiplication by a learnable single-element tensor.
Tensor scalar_scale(const Tensor& x, const Tensor& s);

// Elementwise mean of k same-shape tensors.
Tensor mean_of(std::span<const Tensor> tensors);
Tensor mean_of(std::initializer_list<Tensor> tensors);
// Elementwise sum of k same-shape tensors.
Tensor sum_of(std::span<const Tensor> tensors);
Tensor sum_of(std::initializer_list<Tensor> tensors);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over one axis; the axis is removed from the result.
Tensor mean_axis(const Tensor& x, std::size_t axis);

// a[..., p, q] x b[q, r] -> [..., p, r]. A rank-1 `a` is a single row.
Tensor matmul(const Tensor& a, const Tensor& b);
// a[B, p, q] x b[B, q, r] (or b[B, r, q] when transpose_b) -> [B, p, r].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
// out[i] = x[indices[i]]; backward scatter-adds.
Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<std::size_t>> indices,
              const Shape& out_shape);

Tensor softmax_last(const Tensor& x);

// ---- gradient checking ---------------------------------------------------

struct GradReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  double worst_autodiff = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  // Elements whose central difference is not stable under halving the step;
  // these indicate a numerically ill-conditioned point, not a wrong gradient.
  std::size_t skipped_unstable = 0;
  bool passed = true;
};

// Compares autodiff gradients of `fn` with respect to every element of every
// input against (f(x+eps) - f(x-eps)) / (2 eps). Relative error is
// |a - n| / max(|a|, |n|, 1e-3).
GradReport grad_check(const std::function<Tensor(std::span<const Tensor>)>& fn,
                      std::vector<Tensor> inputs, double eps = 1e-5, double tol = 1e-4);

namespace testing {
// Identity whose backward multiplies the gradient by `factor`. Negative
// control for gradient checking.
Tensor corrupt_gradient(const Tensor& x, double factor);
}  // namespace testing

}  // namespace monalab
