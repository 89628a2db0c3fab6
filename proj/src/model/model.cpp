#include "msmmt/model/model.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "msmmt/diffmath/msmt_io.hpp"

namespace msmmt::model {

using diffmath::Shape;
using nlohmann::json;

template <typename T>
Tensor<T> layer_attention_normalize(const Tensor<T>& attention, LayerNormalization mode) {
  if (attention.rank() != 4 || attention.dim(2) != attention.dim(3)) {
    throw diffmath::TensorError("layer_attention_normalize", "expects [B, H, n, n], got " +
                                                                 diffmath::shape_str(attention.shape()));
  }
  const auto a = diffmath::mean(attention, 1, false);  // [B, n, n]
  if (mode == LayerNormalization::RowMean) return diffmath::div(a, diffmath::mean(a, 2, true));
  return diffmath::div(a, diffmath::mean(diffmath::mean(a, 2, true), 1, true));
}

template <typename T>
Tensor<T> attention_rollup(const std::vector<Tensor<T>>& normalized) {
  if (normalized.empty()) throw diffmath::TensorError("attention_rollup", "empty attention stack");
  Tensor<T> g = normalized.front();
  for (std::size_t l = 1; l < normalized.size(); ++l) g = diffmath::matmul(normalized[l], g);
  return g;
}

template <typename T>
Tensor<T> patch_importance(const Tensor<T>& rollup, ImportanceAxis axis) {
  const auto m = diffmath::mean(rollup, axis == ImportanceAxis::ColumnMean ? 1 : 2, false);  // [B, n]
  const auto patches = diffmath::slice(m, 1, 1, m.dim(1) - 1);
  return diffmath::div(patches, diffmath::max(patches, 1, true));
}

template <typename T>
Tensor<T> weight_patch_tokens(const Tensor<T>& tokens, const Tensor<T>& importance) {
  const std::size_t b = tokens.dim(0), n = tokens.dim(1);
  if (importance.rank() != 2 || importance.dim(0) != b || importance.dim(1) + 1 != n) {
    throw diffmath::TensorError("weight_patch_tokens", "importance " + diffmath::shape_str(importance.shape()) +
                                                           " does not match tokens " +
                                                           diffmath::shape_str(tokens.shape()));
  }
  const auto cls = diffmath::slice(tokens, 1, 0, 1);
  const auto z = diffmath::slice(tokens, 1, 1, n - 1);
  return diffmath::concat<T>({cls, diffmath::mul(z, diffmath::reshape(importance, {b, n - 1, 1}))}, 1);
}

std::vector<Image> multiscale_views(const ModelConfig& config, const Image& img) {
  if (img.height != config.image_size || img.width != config.image_size || img.channels != 3) {
    throw ConfigError("multiscale_views: expected " + std::to_string(config.image_size) + "x" +
                      std::to_string(config.image_size) + "x3 image, got " + std::to_string(img.height) + "x" +
                      std::to_string(img.width) + "x" + std::to_string(img.channels));
  }
  std::vector<Image> views;
  for (std::size_t s = 0; s < config.scales.size(); ++s) {
    const int size = config.view_size(s);
    if (config.grid_size(s) < 2) throw ConfigError("multiscale_views: patch grid smaller than 2x2");
    views.push_back(size == img.height ? img : imaging::resize_bilinear(img, size, size));
  }
  return views;
}

template <typename T>
Tensor<T> patchify(const std::vector<Image>& images, int patch) {
  if (images.empty()) throw ConfigError("patchify: empty batch");
  const auto& f = images.front();
  if (f.height % patch != 0 || f.width % patch != 0) throw ConfigError("patchify: image not divisible by patch");
  const int gh = f.height / patch, gw = f.width / patch, c = f.channels;
  const std::size_t n = static_cast<std::size_t>(gh * gw), dim = static_cast<std::size_t>(patch * patch * c);
  std::vector<T> out;
  out.reserve(images.size() * n * dim);
  for (const auto& img : images) {
    if (!img.same_shape(f)) throw ConfigError("patchify: images differ in shape");
    for (int py = 0; py < gh; ++py)
      for (int px = 0; px < gw; ++px)
        for (int y = 0; y < patch; ++y)
          for (int x = 0; x < patch; ++x)
            for (int ch = 0; ch < c; ++ch)
              out.push_back(static_cast<T>(img.at(py * patch + y, px * patch + x, ch)));
  }
  return Tensor<T>::from_data({images.size(), n, dim}, std::move(out));
}

template <typename T>
std::vector<Tensor<T>> prepare_inputs(const ModelConfig& config, const std::vector<Image>& images) {
  std::vector<std::vector<Image>> per_scale(config.scales.size());
  for (const auto& img : images) {
    auto views = multiscale_views(config, img);
    for (std::size_t s = 0; s < views.size(); ++s) per_scale[s].push_back(std::move(views[s]));
  }
  std::vector<Tensor<T>> out;
  for (const auto& v : per_scale) out.push_back(patchify<T>(v, config.patch_size));
  return out;
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  return diffmath::add(diffmath::matmul(x, weight), bias);
}

template <typename T>
Tensor<T> LayerNorm<T>::operator()(const Tensor<T>& x) const {
  return diffmath::layernorm(x, gamma, beta, static_cast<T>(1e-6));
}

namespace {

template <typename T>
class Init {
 public:
  explicit Init(std::uint64_t seed) : rng_(seed) {}

  // Truncated normal, std 0.02, cut at two standard deviations.
  Tensor<T> trunc_normal(Shape shape) {
    std::normal_distribution<double> nd(0.0, 0.02);
    std::vector<T> v(diffmath::numel(shape));
    for (auto& x : v) {
      double r;
      do r = nd(rng_);
      while (std::abs(r) > 0.04);
      x = static_cast<T>(r);
    }
    return Tensor<T>::from_data(std::move(shape), std::move(v), true);
  }
  Linear<T> linear(std::size_t in, std::size_t out) {
    return {trunc_normal({in, out}), Tensor<T>::zeros({out}, true)};
  }
  LayerNorm<T> norm(std::size_t d) { return {Tensor<T>::full({d}, T(1), true), Tensor<T>::zeros({d}, true)}; }
  EncoderBlock<T> block(std::size_t d, std::size_t hidden) {
    EncoderBlock<T> b;
    b.ln1 = norm(d);
    b.qkv = linear(d, 3 * d);
    b.proj = linear(d, d);
    b.ln2 = norm(d);
    b.fc1 = linear(d, hidden);
    b.fc2 = linear(hidden, d);
    return b;
  }

 private:
  std::mt19937_64 rng_;
};

template <typename T>
void add_block(std::vector<std::pair<std::string, Tensor<T>>>& out, const std::string& p, const EncoderBlock<T>& b) {
  out.emplace_back(p + ".ln1.gamma", b.ln1.gamma);
  out.emplace_back(p + ".ln1.beta", b.ln1.beta);
  out.emplace_back(p + ".qkv.weight", b.qkv.weight);
  out.emplace_back(p + ".qkv.bias", b.qkv.bias);
  out.emplace_back(p + ".proj.weight", b.proj.weight);
  out.emplace_back(p + ".proj.bias", b.proj.bias);
  out.emplace_back(p + ".ln2.gamma", b.ln2.gamma);
  out.emplace_back(p + ".ln2.beta", b.ln2.beta);
  out.emplace_back(p + ".fc1.weight", b.fc1.weight);
  out.emplace_back(p + ".fc1.bias", b.fc1.bias);
  out.emplace_back(p + ".fc2.weight", b.fc2.weight);
  out.emplace_back(p + ".fc2.bias", b.fc2.bias);
}

const char* modality_name(int m) { return m == kDynamic ? "dy" : "flowos"; }

}  // namespace

template <typename T>
Model<T>::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  Init<T> init(config_.init_seed);
  const auto d = static_cast<std::size_t>(config_.embed_dim);
  const auto p = static_cast<std::size_t>(config_.patch_size);
  const auto hidden = d * static_cast<std::size_t>(config_.mlp_ratio);
  for (int m = 0; m < kModalities; ++m) {
    ModalityEncoder<T> e;
    e.patch = init.linear(p * p * 3, d);
    e.cls = init.trunc_normal({d});
    for (std::size_t s = 0; s < config_.scales.size(); ++s) {
      e.pos.push_back(init.trunc_normal({static_cast<std::size_t>(config_.tokens(s)) + 1, d}));
    }
    for (int l = 0; l + 1 < config_.layers; ++l) e.blocks.push_back(init.block(d, hidden));
    e.last = init.block(d, hidden);
    e.norm = init.norm(d);
    encoders_.push_back(std::move(e));
  }
  const auto feat = static_cast<std::size_t>(2 * config_.feature_dim());
  fc1_ = init.linear(feat, static_cast<std::size_t>(config_.head_hidden));
  fc2_ = init.linear(static_cast<std::size_t>(config_.head_hidden), static_cast<std::size_t>(config_.num_classes));
}

template <typename T>
Tensor<T> Model<T>::drop(const Tensor<T>& x, const ForwardContext& ctx) const {
  if (!ctx.training || config_.dropout_rate == 0.0) return x;
  if (!ctx.rng) throw diffmath::TensorError("dropout", "training forward pass needs an rng");
  return diffmath::dropout(x, static_cast<T>(config_.dropout_rate), true, *ctx.rng);
}

template <typename T>
Tensor<T> Model<T>::block_forward(const EncoderBlock<T>& block, const Tensor<T>& x, const ForwardContext& ctx,
                                  Tensor<T>* attention) const {
  const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  const auto h = static_cast<std::size_t>(config_.heads), dh = d / h;
  const auto qkv = block.qkv(block.ln1(x));
  auto split = [&](std::size_t part) {
    return diffmath::permute(diffmath::reshape(diffmath::slice(qkv, 2, part * d, d), {b, n, h, dh}), {0, 2, 1, 3});
  };
  const auto q = split(0), k = split(1), v = split(2);
  const auto scores = diffmath::mul(diffmath::matmul(q, diffmath::transpose(k)), static_cast<T>(1.0 / std::sqrt(dh)));
  const auto att = diffmath::softmax(scores, 3);
  if (attention) *attention = att;
  const auto o = diffmath::reshape(diffmath::permute(diffmath::matmul(att, v), {0, 2, 1, 3}), {b, n, d});
  const auto x1 = diffmath::add(x, drop(block.proj(o), ctx));
  const auto f = block.fc2(diffmath::gelu(block.fc1(block.ln2(x1))));
  return diffmath::add(x1, drop(f, ctx));
}

template <typename T>
Tensor<T> Model<T>::patch_embed(int modality, const Tensor<T>& patches, std::size_t scale) const {
  const auto& e = encoder(modality);
  const auto n = static_cast<std::size_t>(config_.tokens(scale));
  const auto p = static_cast<std::size_t>(config_.patch_size);
  if (patches.rank() != 3 || patches.dim(1) != n || patches.dim(2) != p * p * 3) {
    throw diffmath::TensorError("patch_embed", "patches " + diffmath::shape_str(patches.shape()) +
                                                   " do not match scale " + std::to_string(scale));
  }
  const std::size_t b = patches.dim(0), d = static_cast<std::size_t>(config_.embed_dim);
  const auto tokens = e.patch(patches);
  const auto cls = diffmath::add(Tensor<T>::zeros({b, 1, d}), diffmath::reshape(e.cls, {1, 1, d}));
  const auto seq = diffmath::concat<T>({cls, tokens}, 1);
  return diffmath::add(seq, diffmath::reshape(e.pos.at(scale), {1, n + 1, d}));
}

template <typename T>
EncoderOutput<T> Model<T>::encoder_forward(int modality, const Tensor<T>& tokens, const ForwardContext& ctx) const {
  EncoderOutput<T> out;
  out.tokens = tokens;
  for (const auto& block : encoder(modality).blocks) {
    Tensor<T> att;
    out.tokens = block_forward(block, out.tokens, ctx, &att);
    out.attention.push_back(att);
  }
  return out;
}

template <typename T>
Tensor<T> Model<T>::weighted_last_layer(int modality, const Tensor<T>& tokens, const Tensor<T>& importance,
                                        const ForwardContext& ctx) const {
  const auto& e = encoder(modality);
  const auto out = e.norm(block_forward(e.last, weight_patch_tokens(tokens, importance), ctx, nullptr));
  return diffmath::reshape(diffmath::slice(out, 1, 0, 1), {tokens.dim(0), tokens.dim(2)});
}

template <typename T>
Tensor<T> Model<T>::modality_feature(int modality, const std::vector<Tensor<T>>& inputs, const ForwardContext& ctx,
                                     std::vector<ScaleTrace<T>>* trace) const {
  if (inputs.size() != config_.scales.size()) {
    throw diffmath::TensorError("modality_feature", "expected one input per scale");
  }
  std::vector<Tensor<T>> parts;
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    ScaleTrace<T> st;
    st.encoder = encoder_forward(modality, patch_embed(modality, inputs[s], s), ctx);
    std::vector<Tensor<T>> normalized;
    for (const auto& a : st.encoder.attention) normalized.push_back(layer_attention_normalize(a, config_.layer_normalization));
    st.importance = patch_importance(attention_rollup(normalized), config_.importance_axis);
    st.cls = weighted_last_layer(modality, st.encoder.tokens, st.importance, ctx);
    parts.push_back(st.cls);
    if (trace) trace->push_back(std::move(st));
  }
  return parts.size() == 1 ? parts.front() : diffmath::concat(parts, 1);
}

template <typename T>
Tensor<T> Model<T>::modality_feature(int modality, const std::vector<Image>& images, const ForwardContext& ctx) const {
  return modality_feature(modality, prepare_inputs<T>(config_, images), ctx);
}

template <typename T>
Tensor<T> Model<T>::classify(const Tensor<T>& dy_feature, const Tensor<T>& flow_feature,
                             const ForwardContext& ctx) const {
  const auto x = diffmath::concat<T>({dy_feature, flow_feature}, 1);
  return fc2_(drop(diffmath::relu(fc1_(x)), ctx));
}

template <typename T>
ModelOutput<T> Model<T>::forward(const std::vector<Tensor<T>>& dy_inputs, const std::vector<Tensor<T>>& flow_inputs,
                                 const ForwardContext& ctx) const {
  ModelOutput<T> out;
  out.dy_feature = modality_feature(kDynamic, dy_inputs, ctx);
  out.flow_feature = modality_feature(kFlowOs, flow_inputs, ctx);
  out.logits = classify(out.dy_feature, out.flow_feature, ctx);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Model<T>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (int m = 0; m < kModalities; ++m) {
    const auto& e = encoder(m);
    const std::string p = modality_name(m);
    out.emplace_back(p + ".patch.weight", e.patch.weight);
    out.emplace_back(p + ".patch.bias", e.patch.bias);
    out.emplace_back(p + ".cls", e.cls);
    for (std::size_t s = 0; s < e.pos.size(); ++s) out.emplace_back(p + ".pos." + std::to_string(s), e.pos[s]);
    for (std::size_t l = 0; l < e.blocks.size(); ++l) add_block(out, p + ".block." + std::to_string(l), e.blocks[l]);
    add_block(out, p + ".last", e.last);
    out.emplace_back(p + ".norm.gamma", e.norm.gamma);
    out.emplace_back(p + ".norm.beta", e.norm.beta);
  }
  out.emplace_back("head.fc1.weight", fc1_.weight);
  out.emplace_back("head.fc1.bias", fc1_.bias);
  out.emplace_back("head.fc2.weight", fc2_.weight);
  out.emplace_back("head.fc2.bias", fc2_.bias);
  return out;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& [_, t] : named_parameters()) out.push_back(t);
  return out;
}

void save_checkpoint(const std::filesystem::path& dir, const Model<float>& model) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["config"] = model.config();
  manifest["tensors"] = json::array();
  for (const auto& [name, t] : model.named_parameters()) {
    diffmath::write_msmt(dir / (name + ".msmt"), t.shape(), std::vector<float>(t.data().begin(), t.data().end()));
    manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  }
  diffmath::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Model<float> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw CheckpointError("missing checkpoint manifest in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt checkpoint manifest: " + std::string(e.what()));
  }
  Model<float> model(manifest.at("config").get<ModelConfig>());
  std::set<std::string> listed;
  for (const auto& t : manifest.at("tensors")) listed.insert(t.at("name").get<std::string>());
  const auto params = model.named_parameters();
  if (listed.size() != params.size()) throw CheckpointError("checkpoint tensor list does not match the model");
  for (const auto& [name, t] : params) {
    if (!listed.count(name)) throw CheckpointError("checkpoint is missing tensor " + name);
    const auto path = dir / (name + ".msmt");
    if (!std::filesystem::exists(path)) throw CheckpointError("missing checkpoint tensor file " + path.string());
    const auto raw = diffmath::read_msmt(path);
    if (raw.shape != t.shape()) {
      throw CheckpointError("shape mismatch for " + name + ": checkpoint " + diffmath::shape_str(raw.shape) +
                            ", model " + diffmath::shape_str(t.shape()));
    }
    auto dst = Tensor<float>(t).mutable_data();
    std::copy(raw.values.begin(), raw.values.end(), dst.begin());
  }
  return model;
}

#define MSMMT_INSTANTIATE_MODEL(T)                                                                    \
  template Tensor<T> layer_attention_normalize<T>(const Tensor<T>&, LayerNormalization);            \
  template Tensor<T> attention_rollup<T>(const std::vector<Tensor<T>>&);                            \
  template Tensor<T> patch_importance<T>(const Tensor<T>&, ImportanceAxis);                         \
  template Tensor<T> weight_patch_tokens<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> patchify<T>(const std::vector<Image>&, int);                                   \
  template std::vector<Tensor<T>> prepare_inputs<T>(const ModelConfig&, const std::vector<Image>&); \
  template struct Linear<T>;                                                                         \
  template struct LayerNorm<T>;                                                                      \
  template class Model<T>;

MSMMT_INSTANTIATE_MODEL(float)
MSMMT_INSTANTIATE_MODEL(double)

}  // namespace msmmt::model
