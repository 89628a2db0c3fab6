#include "msmmt/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "msmmt/diffmath/ops.hpp"

namespace msmmt::losses {

using diffmath::Node;

namespace {

template <typename T>
void check_batch(const Tensor<T>& dy, const Tensor<T>& fo, T tau) {
  if (!(tau > 0)) throw LossError("contrastive temperature must be positive");
  if (dy.rank() != 2 || dy.shape() != fo.shape() || dy.dim(0) < 1) {
    throw LossError("contrastive batch needs two [B, K] matrices of equal shape, got " + diffmath::shape_str(dy.shape()) +
                    " and " + diffmath::shape_str(fo.shape()));
  }
}

template <typename T>
std::vector<double> row_norms(const Tensor<T>& x) {
  const std::size_t b = x.dim(0), k = x.dim(1);
  std::vector<double> n(b);
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < k; ++j) s += static_cast<double>(x.data()[i * k + j]) * x.data()[i * k + j];
    if (s == 0) throw LossError("cosine similarity of a zero vector");
    n[i] = std::sqrt(s);
  }
  return n;
}

// Cosine matrix C_ik = cos(dy_i, fo_k).
template <typename T>
std::vector<double> cosine_matrix(const Tensor<T>& dy, const Tensor<T>& fo, const std::vector<double>& ndy,
                                  const std::vector<double>& nfo) {
  const std::size_t b = dy.dim(0), k = dy.dim(1);
  std::vector<double> c(b * b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      double s = 0;
      for (std::size_t d = 0; d < k; ++d) s += static_cast<double>(dy.data()[i * k + d]) * fo.data()[j * k + d];
      c[i * b + j] = s / (ndy[i] * nfo[j]);
    }
  return c;
}

}  // namespace

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw LossError("cosine_sim: dimension mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) throw LossError("cosine similarity of a zero vector");
  return ab / std::sqrt(aa * bb);
}

template <typename T>
T contrastive_anchor_loss(const Tensor<T>& dy, const Tensor<T>& fo, std::size_t i, Anchor anchor, T tau) {
  check_batch(dy, fo, tau);
  const std::size_t b = dy.dim(0);
  if (i >= b) throw LossError("anchor index " + std::to_string(i) + " out of range");
  const auto c = cosine_matrix(dy, fo, row_norms(dy), row_norms(fo));
  auto s = [&](std::size_t r, std::size_t col) { return c[r * b + col] / tau; };
  // Negatives against the anchor, then every term sharing the anchor's index on the other side.
  std::vector<double> terms;
  for (std::size_t k = 0; k < b; ++k)
    if (k != i) terms.push_back(anchor == Anchor::Dynamic ? s(i, k) : s(k, i));
  for (std::size_t k = 0; k < b; ++k) terms.push_back(anchor == Anchor::Dynamic ? s(k, i) : s(i, k));
  const double mx = *std::max_element(terms.begin(), terms.end());
  double z = 0;
  for (double t : terms) z += std::exp(t - mx);
  return static_cast<T>(-s(i, i) + mx + std::log(z));
}

template <typename T>
Tensor<T> contrastive_loss(const Tensor<T>& dy, const Tensor<T>& fo, T tau) {
  check_batch(dy, fo, tau);
  const std::size_t b = dy.dim(0), k = dy.dim(1);
  const auto ndy = row_norms(dy), nfo = row_norms(fo);
  const auto c = cosine_matrix(dy, fo, ndy, nfo);
  const double inv_tau = 1.0 / tau;

  // Both anchor directions see the same terms {S_ik, S_ki : k != i} + {S_ii},
  // so L_con is the batch mean of one per-anchor loss. gs holds dL/dS.
  double total = 0;
  std::vector<double> gs(b * b, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    double mx = c[i * b + i];
    for (std::size_t j = 0; j < b; ++j) mx = std::max({mx, c[i * b + j], c[j * b + i]});
    mx *= inv_tau;
    auto e = [&](std::size_t r, std::size_t col) { return std::exp(c[r * b + col] * inv_tau - mx); };
    double z = e(i, i);
    for (std::size_t j = 0; j < b; ++j)
      if (j != i) z += e(i, j) + e(j, i);
    total += -c[i * b + i] * inv_tau + mx + std::log(z);
    gs[i * b + i] += (-1.0 + e(i, i) / z) / b;
    for (std::size_t j = 0; j < b; ++j)
      if (j != i) {
        gs[i * b + j] += e(i, j) / z / b;
        gs[j * b + i] += e(j, i) / z / b;
      }
  }
  return diffmath::make_result<T>(
      "contrastive_loss", {1}, {static_cast<T>(total / b)}, {dy, fo},
      [=](Node<T>& self) {
        const auto& x = self.inputs[0]->value;
        const auto& y = self.inputs[1]->value;
        T* gx = self.inputs[0]->requires_grad ? self.inputs[0]->grad_buffer().data() : nullptr;
        T* gy = self.inputs[1]->requires_grad ? self.inputs[1]->grad_buffer().data() : nullptr;
        const double up = self.grad[0] * inv_tau;
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < b; ++j) {
            const double g = up * gs[i * b + j];
            if (g == 0) continue;
            const double cij = c[i * b + j], nn = ndy[i] * nfo[j];
            for (std::size_t d = 0; d < k; ++d) {
              const double xi = x[i * k + d], yj = y[j * k + d];
              if (gx) gx[i * k + d] += static_cast<T>(g * (yj / nn - cij * xi / (ndy[i] * ndy[i])));
              if (gy) gy[j * k + d] += static_cast<T>(g * (xi / nn - cij * yj / (nfo[j] * nfo[j])));
            }
          }
      });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw LossError("cross_entropy: logits " + diffmath::shape_str(logits.shape()) + " vs " +
                    std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  std::vector<T> onehot(b * c, T(0));
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw LossError("label " + std::to_string(labels[i]) + " out of range [0, " + std::to_string(c) + ")");
    }
    onehot[i * c + static_cast<std::size_t>(labels[i])] = T(1);
  }
  const auto picked = diffmath::mul(diffmath::log_softmax(logits, 1), Tensor<T>::from_data({b, c}, std::move(onehot)));
  return diffmath::mul(diffmath::sum(picked), static_cast<T>(-1.0 / b));
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& ce, const Tensor<T>& con, T alpha) {
  if (!(alpha >= 0 && alpha <= 1)) throw LossError("alpha must lie in [0, 1]");
  if (alpha == 1) return ce;
  if (alpha == 0) return con;
  return diffmath::add(diffmath::mul(con, static_cast<T>(1 - alpha)), diffmath::mul(ce, alpha));
}

#define MSMMT_INSTANTIATE_LOSSES(T)                                                                  \
  template T contrastive_anchor_loss<T>(const Tensor<T>&, const Tensor<T>&, std::size_t, Anchor, T); \
  template Tensor<T> contrastive_loss<T>(const Tensor<T>&, const Tensor<T>&, T);                     \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, const std::vector<int>&);                    \
  template Tensor<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&, T);

MSMMT_INSTANTIATE_LOSSES(float)
MSMMT_INSTANTIATE_LOSSES(double)

}  // namespace msmmt::losses
