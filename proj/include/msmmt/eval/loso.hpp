#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msmmt/eval/dataset.hpp"
#include "msmmt/eval/features.hpp"
#include "msmmt/eval/metrics.hpp"
#include "msmmt/model/model.hpp"

namespace msmmt::eval {

struct TrainOptions {
  int epochs = 50;
  int batch_size = 16;
  double learning_rate = 5e-5;
  double weight_decay = 0.05;
  double alpha = 0.1;
  double temperature = 0.1;
  std::uint64_t seed = 0;
};

/// Features of one sample plus optional train-only augmented copies.
struct LabeledFeatures {
  SampleFeatures features;
  int label = 0;
  std::vector<SampleFeatures> augmented;
};

struct Prediction {
  std::size_t index = 0;  // into the sample list
  int label = 0;
  int prediction = 0;
  std::vector<double> scores;  // softmax
};

struct TrainResult {
  model::Model<float> model;
  std::vector<double> epoch_loss;
  double train_acc = 0;
};

/// Trains a fresh model (init seed from `config`) on the given samples.
TrainResult train_model(const model::ModelConfig& config, const TrainOptions& options,
                        const std::vector<LabeledFeatures>& data, const std::vector<std::size_t>& indices);

/// Eval-mode predictions, in the order of `indices`.
std::vector<Prediction> predict(const model::Model<float>& model, const std::vector<LabeledFeatures>& data,
                                const std::vector<std::size_t>& indices);

struct FoldResult {
  std::string test_subject;
  std::size_t train_size = 0;
  MetricsReport metrics;
  double train_acc = 0;
  std::vector<double> epoch_loss;
  std::vector<Prediction> predictions;
};

struct LosoResult {
  std::vector<FoldResult> folds;
  MetricsReport aggregate;  // pooled over every fold's predictions
  double train_acc = 0;     // pooled over every fold's training set
  std::map<std::string, MetricsReport> per_source;
};

struct LosoOptions {
  TrainOptions train;
  int workers = 1;
  std::optional<std::string> only_subject;  // run a single fold
};

/// Fold f trains with init seed and shuffle stream derived from (seed, f),
/// so results do not depend on the worker count.
LosoResult run_loso(const std::vector<Sample>& samples, const std::vector<LabeledFeatures>& data,
                    const model::ModelConfig& config, const LosoOptions& options);

struct SweepRow {
  double alpha = 0;
  MetricsReport metrics;
};

std::vector<SweepRow> alpha_sweep(const std::vector<Sample>& samples, const std::vector<LabeledFeatures>& data,
                                  const model::ModelConfig& config, const LosoOptions& options,
                                  const std::vector<double>& alphas);

// ---- reports ----

std::string fold_csv(const LosoResult& result);
std::string aggregate_json(const LosoResult& result, const std::vector<std::string>& class_names);
std::string predictions_csv(const LosoResult& result, const std::vector<Sample>& samples);
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace msmmt::eval
