#pragma once

// Minimal reverse-mode automatic differentiation over dense tensors, with
// exactly the layer set the VGG8 regressor needs. Every op is a template
// over the scalar type: float for training, double for gradient checks.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace brainage::ag {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;

enum class Mode { Train, Eval };

/// Reference is the plain loop nest with a fixed summation order; Fast is
/// im2col followed by BLAS GEMM.
enum class ConvPath { Reference, Fast };

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Handle to a node in the autodiff graph. Copies share the node, like a
/// framework tensor; use detach() for an independent copy.
template <typename T>
class Tensor {
 public:
  using Node = detail::Node<T>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const noexcept { return node_->shape; }
  std::size_t size() const noexcept { return node_->value.size(); }
  std::span<const T> values() const noexcept { return node_->value; }
  std::span<T> mutable_values() noexcept { return node_->value; }
  /// Empty until a backward pass reaches this tensor.
  std::span<const T> grad() const noexcept { return node_->grad; }
  bool requires_grad() const noexcept { return node_->requires_grad; }
  void set_requires_grad(bool on) noexcept { node_->requires_grad = on; }
  void zero_grad() noexcept { node_->grad.clear(); }

  T item() const;

  /// Seeds d(self)/d(self) = 1 (self must hold one element) and
  /// propagates through the graph in reverse topological order.
  void backward();

  Tensor detach() const;

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

/// 3x3x3 kernel, stride 1, zero padding 1, cross-correlation.
/// input [N, Cin, D, H, W], weight [Cout, Cin, 3, 3, 3], bias [Cout].
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 ConvPath path = ConvPath::Fast);

/// Per-channel normalization over (N, D, H, W) with biased variance. In
/// Train mode batch statistics are used and the running stats updated
/// (running variance takes the unbiased estimate); Eval uses running stats.
template <typename T>
Tensor<T> batchnorm3d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& state, Mode mode);

/// max(0, x); the subgradient at 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& input);

/// 2x2x2 window, stride 2, floor semantics. Gradient goes to the argmax;
/// ties go to the lowest linear index.
template <typename T>
Tensor<T> maxpool3d(const Tensor<T>& input);

/// [N, ...] -> [N, prod(...)].
template <typename T>
Tensor<T> flatten(const Tensor<T>& input);

/// input [N, Fin], weight [Fout, Fin], bias [Fout] -> [N, Fout].
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

/// mean |pred - target| over all elements; d/dpred = sign(pred - target) / N.
template <typename T>
Tensor<T> mae_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// sum_i w_i x_i as a scalar tensor. Used to seed directional gradients.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& input, std::span<const T> weights);

template <typename T>
Tensor<T> sum(const Tensor<T>& input);

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t t = 0;
};

/// One bias-corrected Adam update over every parameter. A parameter without
/// a gradient is treated as having a zero gradient. Increments state.t by 1.
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, const AdamConfig& cfg);

}  // namespace brainage::ag
