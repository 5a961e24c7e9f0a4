#pragma once

// Reverse-mode automatic differentiation over dip::Tensor.
//
// A Var is a handle to a graph node. Operations record their parents only when
// at least one parent requires a gradient, so inference through frozen
// networks builds no graph at all. backward() walks the recorded graph once
// in reverse topological order and accumulates into Var::grad().

#include "divinpaint/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace dip {

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Adds g into grad, allocating on first use.
  void accumulate(const typename Tensor<Scalar>::Array& g);
};

template <typename Scalar>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node<Scalar>> n) : node_(std::move(n)) {}

  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  bool defined() const { return static_cast<bool>(node_); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  /// Gradient accumulated by backward(); zero tensor of value's shape if none arrived.
  Tensor<Scalar> grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor<Scalar>(); }

  /// Same value, cut from the graph.
  Var detach() const { return Var(node_->value, false); }

  const std::shared_ptr<Node<Scalar>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

/// Seeds d(root)/d(root) = 1 (root must hold a single element) and back-propagates.
template <typename Scalar>
void backward(const Var<Scalar>& root);

// Elementwise arithmetic. Binary ops broadcast NumPy-style over dimensions of size 1.
template <typename Scalar> Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> scale(const Var<Scalar>& a, Scalar s);
template <typename Scalar> Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar s);
template <typename Scalar> Var<Scalar> square(const Var<Scalar>& a);
/// (a + eps)^(-1/2)
template <typename Scalar> Var<Scalar> rsqrt(const Var<Scalar>& a, Scalar eps);

template <typename Scalar> Var<Scalar> leaky_relu(const Var<Scalar>& a, Scalar slope = Scalar(0.2));
template <typename Scalar> Var<Scalar> tanh(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> sigmoid(const Var<Scalar>& a);
/// log(1 + exp(a)), evaluated without overflow.
template <typename Scalar> Var<Scalar> softplus(const Var<Scalar>& a);
/// Per-channel parametric ReLU; alpha has one entry per channel (dim 1 of a).
template <typename Scalar> Var<Scalar> prelu(const Var<Scalar>& a, const Var<Scalar>& alpha);

template <typename Scalar> Var<Scalar> sum(const Var<Scalar>& a);
template <typename Scalar> Var<Scalar> mean(const Var<Scalar>& a);
/// Sum over one axis, removing it.
template <typename Scalar> Var<Scalar> sum_axis(const Var<Scalar>& a, int axis);

template <typename Scalar> Var<Scalar> reshape(const Var<Scalar>& a, Shape s);
/// Broadcast a (size-1 dims) up to shape s.
template <typename Scalar> Var<Scalar> expand(const Var<Scalar>& a, Shape s);
template <typename Scalar> Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, int axis);
template <typename Scalar> Var<Scalar> slice(const Var<Scalar>& a, int axis, int begin, int end);

/// a[n,k] * b[k,m]
template <typename Scalar> Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b);
/// x[N,in] * weight[out,in]^T + bias[out]; bias may be undefined.
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias);

/// Stride-1 "same" convolution, x[N,C,H,W], weight[O,C,k,k] with odd k.
template <typename Scalar> Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight);
template <typename Scalar> Var<Scalar> upsample2x(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> avgpool2x(const Var<Scalar>& x);
template <typename Scalar> Var<Scalar> maxpool2x(const Var<Scalar>& x);

/// Batch normalisation over (N,H,W) per channel. In training mode the batch
/// statistics are used and the running estimates updated in place.
template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Tensor<Scalar>& running_mean, Tensor<Scalar>& running_var, bool training,
                       Scalar momentum = Scalar(0.1), Scalar eps = Scalar(1e-5));

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) { return mul(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Scalar s, const Var<Scalar>& a) { return scale(a, s); }

/// Mean squared difference over all elements.
template <typename Scalar>
Var<Scalar> mse(const Var<Scalar>& a, const Var<Scalar>& b) {
  return mean(square(sub(a, b)));
}

template <typename Scalar>
Var<Scalar> constant(Tensor<Scalar> t) {
  return Var<Scalar>(std::move(t), false);
}

}  // namespace dip
