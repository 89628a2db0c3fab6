#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "msmmt/diffmath/tensor.hpp"

namespace msmmt::diffmath {

// Elementwise arithmetic. Shapes broadcast right-aligned: each trailing
// dimension must match or be 1 in one operand.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add(const Tensor<T>& a, T b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, T b);
template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> pow(const Tensor<T>& a, T exponent);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
/// tanh approximation.
template <typename T> Tensor<T> gelu(const Tensor<T>& a);

/// [..., m, k] x [..., k, n] with equal leading dims, or [..., m, k] x [k, n].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// Swaps the last two axes.
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& order);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
/// Contiguous range [start, start + length) along `axis`.
template <typename T> Tensor<T> slice(const Tensor<T>& a, int axis, std::size_t start, std::size_t length);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
template <typename T> Tensor<T> sum(const Tensor<T>& a, int axis, bool keepdim);
template <typename T> Tensor<T> mean(const Tensor<T>& a, int axis, bool keepdim);
/// Gradient goes to the first maximal element along the axis.
template <typename T> Tensor<T> max(const Tensor<T>& a, int axis, bool keepdim);

template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x, int axis);
/// Normalizes over the last axis; gamma and beta have the last axis' extent.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

/// Inverted dropout. Identity when `training` is false.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T rate, bool training, std::mt19937_64& rng);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

/// Right-aligned broadcast of two shapes; throws TensorError on mismatch.
Shape broadcast_shape(const char* op, const Shape& a, const Shape& b);

}  // namespace msmmt::diffmath
