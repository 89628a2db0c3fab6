#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace msmmt::diffmath {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised for contract violations inside tensor ops (bad shapes, bad
/// arguments, misuse of the graph). The message always starts with the op
/// name.
class TensorError : public std::runtime_error {
 public:
  TensorError(const std::string& op, const std::string& what)
      : std::runtime_error(op + ": " + what), op_(op) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

/// A result contained NaN or Inf.
class NumericError : public TensorError {
 public:
  using TensorError::TensorError;
};

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr<T>> inputs;
  // Reads this node's grad and accumulates into inputs' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return inputs.empty(); }
  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor with optional reverse-mode gradient tracking.
///
/// A Tensor is a cheap handle onto a shared node. Values are immutable once
/// an op has produced them; only leaves may be written in place (parameter
/// initialization and optimizer updates). Graphs are rebuilt on every
/// forward pass.
///
/// backward() zeroes every intermediate gradient in the graph before
/// propagating, while leaf gradients accumulate across calls until
/// zero_grad() is called.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(NodePtr<T> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  /// Extent along `axis`; negative axes count from the back.
  std::size_t dim(int axis) const;

  std::span<const T> data() const { return node_->value; }
  /// In-place access; only valid on leaves.
  std::span<T> mutable_data();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient values; zeros when no gradient has reached this tensor.
  std::vector<T> grad() const;
  std::span<T> mutable_grad();
  void zero_grad();

  /// Value of a one-element tensor.
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  /// Reverse-mode sweep from this scalar.
  void backward() const;

  /// Same values, no graph.
  Tensor detach() const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(node_->value[i]);
    return Tensor<U>::from_data(shape(), std::move(out), requires_grad());
  }

  const NodePtr<T>& node() const { return node_; }

 private:
  NodePtr<T> node_;
};

/// Builds the result node of a differentiable op. Validates finiteness of
/// `value` (throws NumericError naming `op`) and only records inputs and the
/// backward closure when some input requires a gradient.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> inputs, std::function<void(Node<T>&)> backward);

/// Throws NumericError if any value is NaN/Inf.
template <typename T>
void check_finite(const char* op, std::span<const T> values);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace msmmt::diffmath
