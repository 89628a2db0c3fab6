#include "msmmt/model/config.hpp"

#include <cmath>
#include <set>

namespace msmmt::model {

using nlohmann::json;

int snap_to_patch(double size, int patch) {
  return static_cast<int>(std::floor(size / patch + 0.5)) * patch;
}

int ModelConfig::view_size(std::size_t s) const {
  return snap_to_patch(static_cast<double>(image_size) / scales.at(s), patch_size);
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid model config: " + what); };
  if (image_size <= 0 || patch_size <= 0) fail("image_size and patch_size must be positive");
  if (scales.empty()) fail("scales must not be empty");
  for (std::size_t s = 0; s < scales.size(); ++s) {
    if (scales[s] < 1) fail("scales must be >= 1");
    if (grid_size(s) < 2) {
      fail("scale " + std::to_string(scales[s]) + " gives a " + std::to_string(grid_size(s)) + "x" +
           std::to_string(grid_size(s)) + " patch grid (need at least 2x2)");
    }
  }
  if (layers < 2) fail("layers must be >= 2");
  if (heads < 1 || embed_dim < 1 || embed_dim % heads != 0) fail("heads must divide embed_dim");
  if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (!(dropout_rate >= 0 && dropout_rate < 1)) fail("dropout_rate must be in [0, 1)");
  if (head_hidden < 1) fail("head_hidden must be >= 1");
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"image_size", c.image_size},
           {"patch_size", c.patch_size},
           {"scales", c.scales},
           {"layers", c.layers},
           {"heads", c.heads},
           {"embed_dim", c.embed_dim},
           {"mlp_ratio", c.mlp_ratio},
           {"num_classes", c.num_classes},
           {"dropout_rate", c.dropout_rate},
           {"head_hidden", c.head_hidden},
           {"layer_normalization", c.layer_normalization == LayerNormalization::RowMean ? "row_mean" : "global_mean"},
           {"importance_axis", c.importance_axis == ImportanceAxis::ColumnMean ? "column_mean" : "row_mean"},
           {"init_seed", c.init_seed}};
}

void from_json(const json& j, ModelConfig& c) {
  static const std::set<std::string> known{"image_size",  "patch_size",   "scales",       "layers",
                                           "heads",       "embed_dim",    "mlp_ratio",    "num_classes",
                                           "dropout_rate", "head_hidden", "layer_normalization",
                                           "importance_axis", "init_seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown model config key: " + key);
  }
  c.image_size = j.value("image_size", c.image_size);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.scales = j.value("scales", c.scales);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.init_seed = j.value("init_seed", c.init_seed);
  if (j.contains("layer_normalization")) {
    const auto v = j["layer_normalization"].get<std::string>();
    if (v == "row_mean") c.layer_normalization = LayerNormalization::RowMean;
    else if (v == "global_mean") c.layer_normalization = LayerNormalization::GlobalMean;
    else throw ConfigError("layer_normalization must be row_mean or global_mean");
  }
  if (j.contains("importance_axis")) {
    const auto v = j["importance_axis"].get<std::string>();
    if (v == "column_mean") c.importance_axis = ImportanceAxis::ColumnMean;
    else if (v == "row_mean") c.importance_axis = ImportanceAxis::RowMean;
    else throw ConfigError("importance_axis must be column_mean or row_mean");
  }
}

}  // namespace msmmt::model
