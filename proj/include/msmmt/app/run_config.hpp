#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "msmmt/eval/features.hpp"
#include "msmmt/eval/loso.hpp"
#include "msmmt/eval/synthetic.hpp"
#include "msmmt/model/config.hpp"
#include "msmmt/prep/augment.hpp"
#include "msmmt/prep/evm.hpp"

namespace msmmt::app {

class RunConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataSection {
  std::string manifest;   // empty: <out>/manifest.json
  std::string label_map;  // empty: built-in three-class table
  std::vector<std::string> class_names{"positive", "negative", "surprise"};
  eval::SyntheticSpec synthetic;  // seed comes from train.seed
};

struct PrepSection {
  bool align = false;
  int crop_size = 0;  // 0: model.image_size
  bool evm = true;
  prep::EvmOptions evm_options;
  int augment_copies = 0;
  prep::AugmentOptions augment;
};

struct EvalSection {
  std::vector<double> alpha_sweep{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  int sweep_epochs = 0;  // 0: train.epochs
};

struct RunConfig {
  DataSection data;
  PrepSection prep;
  eval::FeatureOptions features;  // dynimg + flow sections
  model::ModelConfig model;
  eval::TrainOptions train;       // loss.alpha / loss.temperature live here too
  int workers = 1;
  EvalSection eval;

  /// Throws RunConfigError naming the offending key.
  void validate() const;
  nlohmann::json to_json() const;
};

/// Every key is optional; unknown keys are rejected.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace msmmt::app
