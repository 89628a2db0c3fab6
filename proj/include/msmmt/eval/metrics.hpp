#pragma once

#include <stdexcept>
#include <vector>

namespace msmmt::eval {

class EvalError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MetricsReport {
  int num_classes = 0;
  double acc = 0;
  double uar = 0;
  double uf1 = 0;
  std::vector<long> tp, fp, fn, n;
};

/// Accuracy, macro recall and macro F1 over a C-class label space.
/// Classes absent from the labels contribute recall 0.
MetricsReport compute_metrics(const std::vector<int>& labels, const std::vector<int>& predictions, int num_classes);

}  // namespace msmmt::eval
