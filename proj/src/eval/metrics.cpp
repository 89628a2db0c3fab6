#include "msmmt/eval/metrics.hpp"

#include <string>

namespace msmmt::eval {

MetricsReport compute_metrics(const std::vector<int>& labels, const std::vector<int>& predictions, int num_classes) {
  if (labels.size() != predictions.size()) {
    throw EvalError("labels and predictions differ in length (" + std::to_string(labels.size()) + " vs " +
                    std::to_string(predictions.size()) + ")");
  }
  if (num_classes < 1) throw EvalError("num_classes must be positive");
  MetricsReport r;
  r.num_classes = num_classes;
  const auto C = static_cast<std::size_t>(num_classes);
  r.tp.assign(C, 0);
  r.fp.assign(C, 0);
  r.fn.assign(C, 0);
  r.n.assign(C, 0);
  long correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    const int p = predictions[i];
    if (y < 0 || y >= num_classes || p < 0 || p >= num_classes) {
      throw EvalError("class index out of range at position " + std::to_string(i));
    }
    ++r.n[static_cast<std::size_t>(y)];
    if (y == p) {
      ++correct;
      ++r.tp[static_cast<std::size_t>(y)];
    } else {
      ++r.fn[static_cast<std::size_t>(y)];
      ++r.fp[static_cast<std::size_t>(p)];
    }
  }
  if (labels.empty()) return r;
  r.acc = static_cast<double>(correct) / static_cast<double>(labels.size());
  double recall = 0;
  double f1 = 0;
  for (std::size_t c = 0; c < C; ++c) {
    if (r.n[c] > 0) recall += static_cast<double>(r.tp[c]) / static_cast<double>(r.n[c]);
    const long denom = 2 * r.tp[c] + r.fp[c] + r.fn[c];
    if (denom > 0) f1 += 2.0 * static_cast<double>(r.tp[c]) / static_cast<double>(denom);
  }
  r.uar = recall / num_classes;
  r.uf1 = f1 / num_classes;
  return r;
}

}  // namespace msmmt::eval
