#include "msmmt/diffmath/adamw.hpp"

#include <cmath>

namespace msmmt::diffmath {

template <typename T>
void AdamWState<T>::initialize(const std::vector<Tensor<T>>& params) {
  first_moment.clear();
  second_moment.clear();
  for (const auto& p : params) {
    first_moment.emplace_back(p.numel(), T(0));
    second_moment.emplace_back(p.numel(), T(0));
  }
  step = 0;
  initialized = true;
}

template <typename T>
void adamw_step(std::vector<Tensor<T>>& params, AdamWState<T>& state) {
  if (!state.initialized) throw TensorError("adamw_step", "optimizer state is not initialized");
  if (params.size() != state.first_moment.size()) throw TensorError("adamw_step", "parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].numel() != state.first_moment[i].size()) {
      throw TensorError("adamw_step", "moment buffer does not match parameter " + std::to_string(i));
    }
  }

  const auto& o = state.options;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  const T lr = static_cast<T>(o.learning_rate);
  const T decay = static_cast<T>(o.learning_rate * o.weight_decay);
  const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
  const T eps = static_cast<T>(o.epsilon);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    const bool has_grad = params[i].has_grad();
    auto g = has_grad ? params[i].mutable_grad() : std::span<T>{};
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const T gk = has_grad ? g[k] : T(0);
      w[k] -= decay * w[k];
      m[k] = b1 * m[k] + (T(1) - b1) * gk;
      v[k] = b2 * v[k] + (T(1) - b2) * gk * gk;
      const T mhat = m[k] / static_cast<T>(bc1);
      const T vhat = v[k] / static_cast<T>(bc2);
      w[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    check_finite<T>("adamw_step", w);
  }
}

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, AdamWOptions options) : params_(std::move(params)) {
  state_.options = options;
  state_.initialize(params_);
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template struct AdamWState<float>;
template struct AdamWState<double>;
template class AdamW<float>;
template class AdamW<double>;
template void adamw_step<float>(std::vector<Tensor<float>>&, AdamWState<float>&);
template void adamw_step<double>(std::vector<Tensor<double>>&, AdamWState<double>&);

}  // namespace msmmt::diffmath
