#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "msmmt/diffmath/tensor.hpp"

namespace msmmt::diffmath {

struct AdamWOptions {
  double learning_rate = 5e-5;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment buffers and step counter for AdamW. `initialize` must run before
/// the first step.
template <typename T>
struct AdamWState {
  AdamWOptions options;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
  std::int64_t step = 0;
  bool initialized = false;

  void initialize(const std::vector<Tensor<T>>& params);
};

/// One decoupled-weight-decay Adam update (Loshchilov & Hutter):
///   p <- p - lr*wd*p
///   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
/// Parameters without a gradient are treated as having a zero gradient.
template <typename T>
void adamw_step(std::vector<Tensor<T>>& params, AdamWState<T>& state);

/// Optimizer wrapper holding its parameter list.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, AdamWOptions options);

  void step() { adamw_step(params_, state_); }
  void zero_grad();
  const AdamWState<T>& state() const { return state_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamWState<T> state_;
};

extern template struct AdamWState<float>;
extern template struct AdamWState<double>;
extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace msmmt::diffmath
