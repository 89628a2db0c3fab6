#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "msmmt/diffmath/tensor.hpp"

namespace msmmt::losses {

using diffmath::Tensor;

class LossError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Anchor { Dynamic, FlowOs };

inline constexpr double kDefaultTemperature = 0.1;
inline constexpr double kDefaultAlpha = 0.1;

/// <a, b> / (|a| |b|); throws LossError on a zero vector.
double cosine_sim(std::span<const double> a, std::span<const double> b);

/// Per-anchor cross-modal loss for row i of dy / flow_os ([B, K] each):
///   -S_ii + log( sum_{k != i} exp(S_ik) + sum_k exp(S_ki) )   (dy anchor)
/// with S_ik = cos(dy_i, flow_os_k) / tau; the flow_os anchor mirrors it.
template <typename T>
T contrastive_anchor_loss(const Tensor<T>& dy, const Tensor<T>& flow_os, std::size_t i, Anchor anchor, T tau);

/// Mean of both anchor directions over the batch (differentiable).
template <typename T>
Tensor<T> contrastive_loss(const Tensor<T>& dy, const Tensor<T>& flow_os, T tau);

/// Mean softmax cross-entropy of logits [B, C].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

/// (1 - alpha) * con + alpha * ce.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& ce, const Tensor<T>& con, T alpha);

}  // namespace msmmt::losses
