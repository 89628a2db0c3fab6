#include "msmmt/diffmath/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace msmmt::diffmath {
namespace {

template <typename T>
T* grad_of(Node<T>& self, std::size_t i) {
  auto& in = *self.inputs[i];
  return in.requires_grad ? in.grad_buffer().data() : nullptr;
}

template <typename T>
const std::vector<T>& value_of(const Node<T>& self, std::size_t i) {
  return self.inputs[i]->value;
}

std::size_t normalize_axis(const char* op, int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw TensorError(op, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// Flat index into `in` for every flat index of `out` (in right-aligned
// broadcast against out). Empty when the shapes are identical.
std::vector<std::size_t> broadcast_map(const Shape& out, const Shape& in) {
  if (in == out) return {};
  const auto n = numel(out);
  const auto r = out.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(), j = r; i-- > 0;) {
    --j;
    if (in[i] != 1) stride[j] = s;
    s *= in[i];
  }
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < n; ++k) {
    map[k] = off;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      off += stride[d];
      if (idx[d] < out[d]) break;
      off -= stride[d] * out[d];
      idx[d] = 0;
    }
  }
  return map;
}

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
  Shape out_shape = broadcast_shape(op, a.shape(), b.shape());
  auto ma = broadcast_map(out_shape, a.shape());
  auto mb = broadcast_map(out_shape, b.shape());
  const auto n = numel(out_shape);
  std::vector<T> out(n);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(av[ma.empty() ? i : ma[i]], bv[mb.empty() ? i : mb[i]]);
  }
  return make_result<T>(op, std::move(out_shape), std::move(out), {a, b},
                        [ma = std::move(ma), mb = std::move(mb), da, db](Node<T>& self) {
                          const auto& x = value_of(self, 0);
                          const auto& y = value_of(self, 1);
                          T* ga = grad_of(self, 0);
                          T* gb = grad_of(self, 1);
                          for (std::size_t i = 0; i < self.value.size(); ++i) {
                            const auto ia = ma.empty() ? i : ma[i];
                            const auto ib = mb.empty() ? i : mb[i];
                            const T g = self.grad[i];
                            if (ga) ga[ia] += g * da(x[ia], y[ib], self.value[i]);
                            if (gb) gb[ib] += g * db(x[ia], y[ib], self.value[i]);
                          }
                        });
}

template <typename T, typename F, typename D>
Tensor<T> unary(const char* op, const Tensor<T>& a, F f, D d) {
  const auto av = a.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_result<T>(op, a.shape(), std::move(out), {a}, [d](Node<T>& self) {
    const auto& x = value_of(self, 0);
    T* ga = grad_of(self, 0);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += self.grad[i] * d(x[i], self.value[i]);
  });
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const auto r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t eb = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw TensorError(op, "shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    }
    out[r - 1 - i] = std::max(ea, eb);
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  for (auto v : b.data()) {
    if (v == T(0)) throw TensorError("div", "division by zero");
  }
  return binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T out) { return -out / y; });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, T b) {
  return unary<T>(
      "add", a, [b](T x) { return x + b; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, T b) {
  return unary<T>(
      "mul", a, [b](T x) { return x * b; }, [b](T, T) { return b; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return unary<T>(
      "neg", a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> pow(const Tensor<T>& a, T exponent) {
  return unary<T>(
      "pow", a, [exponent](T x) { return std::pow(x, exponent); },
      [exponent](T x, T) { return exponent * std::pow(x, exponent - T(1)); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T out) { return out; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  for (auto v : a.data()) {
    if (v < T(0)) throw TensorError("log", "negative input");
  }
  return unary<T>(
      "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  for (auto v : a.data()) {
    if (v < T(0)) throw TensorError("sqrt", "negative input");
  }
  return unary<T>(
      "sqrt", a, [](T x) { return std::sqrt(x); }, [](T, T out) { return T(0.5) / out; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T k = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T c = static_cast<T>(0.044715);
  return unary<T>(
      "gelu", a,
      [](T x) { return T(0.5) * x * (T(1) + std::tanh(k * (x + c * x * x * x))); },
      [](T x, T) {
        const T t = std::tanh(k * (x + c * x * x * x));
        return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * k * (T(1) + T(3) * c * x * x);
      });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) throw TensorError("matmul", "operands must have rank >= 2");
  const std::size_t m = a.dim(-2), k = a.dim(-1);
  const std::size_t k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2) {
    throw TensorError("matmul", "inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const bool shared_b = b.rank() == 2;
  if (!shared_b) {
    if (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      throw TensorError("matmul", "leading dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
  }
  const std::size_t batch = a.numel() / (m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  std::vector<T> out(batch * m * n);

  using M = RowMat<T>;
  const auto ia = static_cast<Eigen::Index>(m), ik = static_cast<Eigen::Index>(k), in = static_cast<Eigen::Index>(n);
  if (shared_b) {
    const auto rows = static_cast<Eigen::Index>(batch * m);
    Eigen::Map<M>(out.data(), rows, in).noalias() =
        Eigen::Map<const M>(a.data().data(), rows, ik) * Eigen::Map<const M>(b.data().data(), ik, in);
  } else {
    for (std::size_t s = 0; s < batch; ++s) {
      Eigen::Map<M>(out.data() + s * m * n, ia, in).noalias() =
          Eigen::Map<const M>(a.data().data() + s * m * k, ia, ik) *
          Eigen::Map<const M>(b.data().data() + s * k * n, ik, in);
    }
  }

  return make_result<T>("matmul", std::move(out_shape), std::move(out), {a, b},
                        [=](Node<T>& self) {
                          const auto& av = value_of(self, 0);
                          const auto& bv = value_of(self, 1);
                          T* ga = grad_of(self, 0);
                          T* gb = grad_of(self, 1);
                          if (shared_b) {
                            const auto rows = static_cast<Eigen::Index>(batch * m);
                            Eigen::Map<const M> dc(self.grad.data(), rows, in);
                            if (ga) {
                              Eigen::Map<M>(ga, rows, ik).noalias() += dc * Eigen::Map<const M>(bv.data(), ik, in).transpose();
                            }
                            if (gb) {
                              Eigen::Map<M>(gb, ik, in).noalias() += Eigen::Map<const M>(av.data(), rows, ik).transpose() * dc;
                            }
                            return;
                          }
                          for (std::size_t s = 0; s < batch; ++s) {
                            Eigen::Map<const M> dc(self.grad.data() + s * m * n, ia, in);
                            if (ga) {
                              Eigen::Map<M>(ga + s * m * k, ia, ik).noalias() +=
                                  dc * Eigen::Map<const M>(bv.data() + s * k * n, ik, in).transpose();
                            }
                            if (gb) {
                              Eigen::Map<M>(gb + s * k * n, ik, in).noalias() +=
                                  Eigen::Map<const M>(av.data() + s * m * k, ia, ik).transpose() * dc;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& order) {
  const auto r = a.rank();
  if (order.size() != r) throw TensorError("permute", "order length does not match rank");
  std::vector<bool> seen(r, false);
  for (auto o : order) {
    if (o >= r || seen[o]) throw TensorError("permute", "order is not a permutation");
    seen[o] = true;
  }
  const auto& in_shape = a.shape();
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[order[i]];
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * in_shape[i + 1];
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) step[i] = in_stride[order[i]];

  const auto n = a.numel();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < n; ++k) {
    map[k] = off;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      off += step[d];
      if (idx[d] < out_shape[d]) break;
      off -= step[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  std::vector<T> out(n);
  const auto av = a.data();
  for (std::size_t k = 0; k < n; ++k) out[k] = av[map[k]];
  return make_result<T>("permute", std::move(out_shape), std::move(out), {a}, [map = std::move(map)](Node<T>& self) {
    T* ga = grad_of(self, 0);
    for (std::size_t k = 0; k < map.size(); ++k) ga[map[k]] += self.grad[k];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() < 2) throw TensorError("transpose", "rank must be >= 2");
  std::vector<std::size_t> order(a.rank());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::swap(order[order.size() - 1], order[order.size() - 2]);
  return permute(a, order);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw TensorError("reshape", "cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {a}, [](Node<T>& self) {
    T* ga = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, std::size_t start, std::size_t length) {
  const auto ax = normalize_axis("slice", axis, a.rank());
  const auto sp = split_at(a.shape(), ax);
  if (length == 0 || start + length > sp.extent) throw TensorError("slice", "range out of bounds");
  Shape out_shape = a.shape();
  out_shape[ax] = length;
  std::vector<T> out(sp.outer * length * sp.inner);
  const auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>((o * sp.extent + start) * sp.inner), length * sp.inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * length * sp.inner));
  }
  return make_result<T>("slice", std::move(out_shape), std::move(out), {a}, [sp, start, length](Node<T>& self) {
    T* ga = grad_of(self, 0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      const T* src = self.grad.data() + o * length * sp.inner;
      T* dst = ga + (o * sp.extent + start) * sp.inner;
      for (std::size_t i = 0; i < length * sp.inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw TensorError("concat", "no inputs");
  const auto ax = normalize_axis("concat", axis, parts[0].rank());
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    if (p.rank() != out_shape.size()) throw TensorError("concat", "rank mismatch");
    for (std::size_t d = 0; d < p.rank(); ++d) {
      if (d != ax && p.shape()[d] != parts[0].shape()[d]) {
        throw TensorError("concat", "shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
      }
    }
    extents.push_back(p.shape()[ax]);
    out_shape[ax] += p.shape()[ax];
  }
  const auto sp = split_at(out_shape, ax);
  std::vector<T> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto pv = parts[p].data();
    const auto block = extents[p] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  out.begin() + static_cast<std::ptrdiff_t>((o * sp.extent + offset) * sp.inner));
    }
    offset += extents[p];
  }
  return make_result<T>("concat", std::move(out_shape), std::move(out), parts, [sp, extents](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < extents.size(); ++p) {
      T* gp = grad_of(self, p);
      const auto block = extents[p] * sp.inner;
      if (gp) {
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const T* src = self.grad.data() + (o * sp.extent + offset) * sp.inner;
          for (std::size_t i = 0; i < block; ++i) gp[o * block + i] += src[i];
        }
      }
      offset += extents[p];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (auto v : a.data()) s += v;
  return make_result<T>("sum", Shape{1}, std::vector<T>{s}, {a}, [](Node<T>& self) {
    T* ga = grad_of(self, 0);
    const T g = self.grad[0];
    for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) ga[i] += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return mul(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a, int axis, bool keepdim) {
  const auto ax = normalize_axis("sum", axis, a.rank());
  const auto sp = split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  if (keepdim || a.rank() == 1) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  std::vector<T> out(sp.outer * sp.inner, T(0));
  const auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t e = 0; e < sp.extent; ++e)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += av[(o * sp.extent + e) * sp.inner + i];
  return make_result<T>("sum", std::move(out_shape), std::move(out), {a}, [sp](Node<T>& self) {
    T* ga = grad_of(self, 0);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t e = 0; e < sp.extent; ++e)
        for (std::size_t i = 0; i < sp.inner; ++i) ga[(o * sp.extent + e) * sp.inner + i] += self.grad[o * sp.inner + i];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a, int axis, bool keepdim) {
  const auto ax = normalize_axis("mean", axis, a.rank());
  return mul(sum(a, axis, keepdim), T(1) / static_cast<T>(a.shape()[ax]));
}

template <typename T>
Tensor<T> max(const Tensor<T>& a, int axis, bool keepdim) {
  const auto ax = normalize_axis("max", axis, a.rank());
  const auto sp = split_at(a.shape(), ax);
  Shape out_shape = a.shape();
  if (keepdim || a.rank() == 1) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  std::vector<T> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(sp.outer * sp.inner);
  const auto av = a.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = o * sp.extent * sp.inner + i;
      for (std::size_t e = 1; e < sp.extent; ++e) {
        const auto idx = (o * sp.extent + e) * sp.inner + i;
        if (av[idx] > av[best]) best = idx;
      }
      out[o * sp.inner + i] = av[best];
      arg[o * sp.inner + i] = best;
    }
  }
  return make_result<T>("max", std::move(out_shape), std::move(out), {a}, [arg = std::move(arg)](Node<T>& self) {
    T* ga = grad_of(self, 0);
    for (std::size_t k = 0; k < arg.size(); ++k) ga[arg[k]] += self.grad[k];
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const auto ax = normalize_axis("softmax", axis, x.rank());
  const auto sp = split_at(x.shape(), ax);
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const auto base = o * sp.extent * sp.inner + i;
      T m = xv[base];
      for (std::size_t e = 1; e < sp.extent; ++e) m = std::max(m, xv[base + e * sp.inner]);
      T s = 0;
      for (std::size_t e = 0; e < sp.extent; ++e) {
        const T v = std::exp(xv[base + e * sp.inner] - m);
        out[base + e * sp.inner] = v;
        s += v;
      }
      for (std::size_t e = 0; e < sp.extent; ++e) out[base + e * sp.inner] /= s;
    }
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {x}, [sp](Node<T>& self) {
    T* gx = grad_of(self, 0);
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const auto base = o * sp.extent * sp.inner + i;
        T dot = 0;
        for (std::size_t e = 0; e < sp.extent; ++e) dot += g[base + e * sp.inner] * y[base + e * sp.inner];
        for (std::size_t e = 0; e < sp.extent; ++e) {
          const auto k = base + e * sp.inner;
          gx[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis) {
  const auto ax = normalize_axis("log_softmax", axis, x.rank());
  const auto sp = split_at(x.shape(), ax);
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const auto base = o * sp.extent * sp.inner + i;
      T m = xv[base];
      for (std::size_t e = 1; e < sp.extent; ++e) m = std::max(m, xv[base + e * sp.inner]);
      T s = 0;
      for (std::size_t e = 0; e < sp.extent; ++e) s += std::exp(xv[base + e * sp.inner] - m);
      const T lse = m + std::log(s);
      for (std::size_t e = 0; e < sp.extent; ++e) out[base + e * sp.inner] = xv[base + e * sp.inner] - lse;
    }
  }
  return make_result<T>("log_softmax", x.shape(), std::move(out), {x}, [sp](Node<T>& self) {
    T* gx = grad_of(self, 0);
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const auto base = o * sp.extent * sp.inner + i;
        T gs = 0;
        for (std::size_t e = 0; e < sp.extent; ++e) gs += g[base + e * sp.inner];
        for (std::size_t e = 0; e < sp.extent; ++e) {
          const auto k = base + e * sp.inner;
          gx[k] += g[k] - std::exp(y[k]) * gs;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() == 0) throw TensorError("layernorm", "zero-length last axis");
  if (!(eps > T(0))) throw TensorError("layernorm", "eps must be positive");
  const std::size_t d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d) throw TensorError("layernorm", "gamma/beta size mismatch");
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(rows);
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * rstd[r];
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return make_result<T>(
      "layernorm", x.shape(), std::move(out), {x, gamma, beta},
      [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        T* gx = grad_of(self, 0);
        T* gg = grad_of(self, 1);
        T* gb = grad_of(self, 2);
        const auto& gam = value_of(self, 1);
        const auto& g = self.grad;
        std::vector<T> dxh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data() + r * d;
          const T* hr = xhat.data() + r * d;
          if (gg)
            for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * hr[j];
          if (gb)
            for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
          if (!gx) continue;
          T m1 = 0, m2 = 0;
          for (std::size_t j = 0; j < d; ++j) {
            dxh[j] = gr[j] * gam[j];
            m1 += dxh[j];
            m2 += dxh[j] * hr[j];
          }
          m1 /= static_cast<T>(d);
          m2 /= static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += rstd[r] * (dxh[j] - m1 - hr[j] * m2);
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T rate, bool training, std::mt19937_64& rng) {
  if (!(rate >= T(0) && rate < T(1))) throw TensorError("dropout", "rate must lie in [0, 1)");
  if (!training || rate == T(0)) return x;
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  const T scale = T(1) / (T(1) - rate);
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? scale : T(0);
  return mul(x, Tensor<T>::from_data(x.shape(), std::move(mask)));
}

#define MSMMT_INSTANTIATE_OPS(T)                                                             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> add(const Tensor<T>&, T);                                               \
  template Tensor<T> mul(const Tensor<T>&, T);                                               \
  template Tensor<T> neg(const Tensor<T>&);                                                  \
  template Tensor<T> pow(const Tensor<T>&, T);                                               \
  template Tensor<T> exp(const Tensor<T>&);                                                  \
  template Tensor<T> log(const Tensor<T>&);                                                  \
  template Tensor<T> sqrt(const Tensor<T>&);                                                 \
  template Tensor<T> relu(const Tensor<T>&);                                                 \
  template Tensor<T> gelu(const Tensor<T>&);                                                 \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> transpose(const Tensor<T>&);                                            \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                       \
  template Tensor<T> slice(const Tensor<T>&, int, std::size_t, std::size_t);                 \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                             \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                 \
  template Tensor<T> sum(const Tensor<T>&, int, bool);                                       \
  template Tensor<T> mean(const Tensor<T>&, int, bool);                                      \
  template Tensor<T> max(const Tensor<T>&, int, bool);                                       \
  template Tensor<T> softmax(const Tensor<T>&, int);                                         \
  template Tensor<T> log_softmax(const Tensor<T>&, int);                                     \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> dropout(const Tensor<T>&, T, bool, std::mt19937_64&);

MSMMT_INSTANTIATE_OPS(float)
MSMMT_INSTANTIATE_OPS(double)

}  // namespace msmmt::diffmath
