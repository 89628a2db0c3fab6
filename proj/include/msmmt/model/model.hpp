#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "msmmt/diffmath/ops.hpp"
#include "msmmt/imaging/image.hpp"
#include "msmmt/model/config.hpp"

namespace msmmt::model {

using diffmath::Tensor;
using imaging::Image;

enum Modality : int { kDynamic = 0, kFlowOs = 1 };
inline constexpr int kModalities = 2;

// ---- attention fusion (batched over the leading axis) ----

/// [B, H, n, n] -> [B, n, n]: head mean, then each row divided by its mean
/// (or the whole matrix by its global mean).
template <typename T>
Tensor<T> layer_attention_normalize(const Tensor<T>& attention, LayerNormalization mode);

/// G_{L-1} * ... * G_1 for normalized layers given in order 1..L-1.
template <typename T>
Tensor<T> attention_rollup(const std::vector<Tensor<T>>& normalized);

/// [B, n, n] -> [B, n-1]: column mean (or row mean), cls dropped, divided by the max.
template <typename T>
Tensor<T> patch_importance(const Tensor<T>& rollup, ImportanceAxis axis);

/// [cls; g_j * z_j] for tokens [B, n, D] and importance [B, n-1].
template <typename T>
Tensor<T> weight_patch_tokens(const Tensor<T>& tokens, const Tensor<T>& importance);

// ---- inputs ----

/// One view per configured scale, bilinear-resized to the snapped size; the
/// scale-1 view is the input itself when no resize is needed.
std::vector<Image> multiscale_views(const ModelConfig& config, const Image& img);

/// Non-overlapping patches of same-sized images as [B, N, p*p*C], each
/// patch flattened row-major over (y, x, channel).
template <typename T>
Tensor<T> patchify(const std::vector<Image>& images, int patch);

/// Per-scale patch tensors for a batch of modality images.
template <typename T>
std::vector<Tensor<T>> prepare_inputs(const ModelConfig& config, const std::vector<Image>& images);

// ---- parameters ----

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]
  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct EncoderBlock {
  LayerNorm<T> ln1;
  Linear<T> qkv;
  Linear<T> proj;
  LayerNorm<T> ln2;
  Linear<T> fc1;
  Linear<T> fc2;
};

template <typename T>
struct ModalityEncoder {
  Linear<T> patch;
  Tensor<T> cls;               // [D]
  std::vector<Tensor<T>> pos;  // per scale [N_s + 1, D]
  std::vector<EncoderBlock<T>> blocks;  // layers 1..L-1
  EncoderBlock<T> last;
  LayerNorm<T> norm;
};

struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout
};

template <typename T>
struct EncoderOutput {
  Tensor<T> tokens;                   // Z_{L-1}: [B, N+1, D]
  std::vector<Tensor<T>> attention;   // per layer [B, H, N+1, N+1]
};

template <typename T>
struct ScaleTrace {
  EncoderOutput<T> encoder;
  Tensor<T> importance;  // [B, N]
  Tensor<T> cls;         // [B, D]
};

template <typename T>
struct ModelOutput {
  Tensor<T> dy_feature;    // [B, S*D]
  Tensor<T> flow_feature;  // [B, S*D]
  Tensor<T> logits;        // [B, C]
};

template <typename T>
class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  /// [B, N, p*p*3] -> [B, N+1, D]
  Tensor<T> patch_embed(int modality, const Tensor<T>& patches, std::size_t scale) const;
  EncoderOutput<T> encoder_forward(int modality, const Tensor<T>& tokens, const ForwardContext& ctx) const;
  /// Last block over [cls; g_j z_j] followed by the final norm; returns the cls token [B, D].
  Tensor<T> weighted_last_layer(int modality, const Tensor<T>& tokens, const Tensor<T>& importance,
                                const ForwardContext& ctx) const;
  /// Concatenated per-scale cls tokens [B, S*D].
  Tensor<T> modality_feature(int modality, const std::vector<Tensor<T>>& inputs, const ForwardContext& ctx,
                             std::vector<ScaleTrace<T>>* trace = nullptr) const;
  Tensor<T> modality_feature(int modality, const std::vector<Image>& images, const ForwardContext& ctx) const;
  Tensor<T> classify(const Tensor<T>& dy_feature, const Tensor<T>& flow_feature, const ForwardContext& ctx) const;

  ModelOutput<T> forward(const std::vector<Tensor<T>>& dy_inputs, const std::vector<Tensor<T>>& flow_inputs,
                         const ForwardContext& ctx) const;

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const;
  std::vector<Tensor<T>> parameters() const;

  ModalityEncoder<T>& encoder(int modality) { return encoders_.at(static_cast<std::size_t>(modality)); }
  const ModalityEncoder<T>& encoder(int modality) const { return encoders_.at(static_cast<std::size_t>(modality)); }
  Linear<T>& head_fc1() { return fc1_; }
  Linear<T>& head_fc2() { return fc2_; }

 private:
  Tensor<T> block_forward(const EncoderBlock<T>& block, const Tensor<T>& x, const ForwardContext& ctx,
                          Tensor<T>* attention) const;
  Tensor<T> drop(const Tensor<T>& x, const ForwardContext& ctx) const;

  ModelConfig config_;
  std::vector<ModalityEncoder<T>> encoders_;
  Linear<T> fc1_;
  Linear<T> fc2_;
};

/// Directory of MSMT tensors (one per named parameter) plus manifest.json
/// holding the ModelConfig and the tensor list.
void save_checkpoint(const std::filesystem::path& dir, const Model<float>& model);
/// Throws CheckpointError on any missing tensor or shape mismatch.
Model<float> load_checkpoint(const std::filesystem::path& dir);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace msmmt::model
