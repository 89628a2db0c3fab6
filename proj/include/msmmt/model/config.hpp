#pragma once

#include <json.hpp>

#include <stdexcept>
#include <string>
#include <vector>

namespace msmmt::model {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LayerNormalization { RowMean, GlobalMean };
enum class ImportanceAxis { ColumnMean, RowMean };

struct ModelConfig {
  int image_size = 64;
  int patch_size = 16;
  std::vector<int> scales{1, 2};
  int layers = 4;
  int heads = 4;
  int embed_dim = 64;
  int mlp_ratio = 4;
  int num_classes = 3;
  double dropout_rate = 0.1;
  int head_hidden = 128;
  LayerNormalization layer_normalization = LayerNormalization::RowMean;
  ImportanceAxis importance_axis = ImportanceAxis::ColumnMean;
  std::uint64_t init_seed = 0;

  /// Throws ConfigError when any invariant fails.
  void validate() const;
  /// Side length of the view for scale index s, snapped to a patch multiple.
  int view_size(std::size_t s) const;
  int grid_size(std::size_t s) const { return view_size(s) / patch_size; }
  int tokens(std::size_t s) const { return grid_size(s) * grid_size(s); }
  int feature_dim() const { return static_cast<int>(scales.size()) * embed_dim; }
};

/// Nearest multiple of `patch` to `size`, ties rounded up.
int snap_to_patch(double size, int patch);

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Unknown keys are rejected.
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace msmmt::model
