#include "msmmt/app/commands.hpp"

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <cstdio>
#include <functional>
#include <iostream>
#include <mutex>
#include <thread>

#include "msmmt/diffmath/msmt_io.hpp"
#include "msmmt/prep/align.hpp"
#include "msmmt/prep/augment.hpp"
#include "msmmt/prep/evm.hpp"

namespace msmmt::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fs::path source_manifest(const RunConfig& config, const fs::path& out) {
  return config.data.manifest.empty() ? out / "manifest.json" : fs::path(config.data.manifest);
}

fs::path preprocessed_manifest(const fs::path& out) { return out / "preprocessed" / "manifest.json"; }

// Manifest feeding features/train/loso: preprocessed when available.
fs::path working_manifest(const RunConfig& config, const fs::path& out) {
  const auto pre = preprocessed_manifest(out);
  return fs::exists(pre) ? pre : source_manifest(config, out);
}

eval::LabelMap label_map(const RunConfig& config) {
  return config.data.label_map.empty() ? eval::LabelMap::cde() : eval::LabelMap::load(config.data.label_map);
}

std::vector<eval::Sample> load_samples(const RunConfig& config, const fs::path& manifest) {
  if (!fs::exists(manifest)) throw eval::EvalError("manifest not found: " + manifest.string());
  auto samples = eval::read_manifest(manifest, label_map(config));
  for (const auto& s : samples) {
    if (s.label >= config.model.num_classes) {
      throw eval::EvalError("sample " + s.id + " has label " + std::to_string(s.label) + " outside " +
                            std::to_string(config.model.num_classes) + " classes");
    }
  }
  return samples;
}

// Clip with the manifest's annotation applied.
prep::VideoClip load_annotated(const fs::path& manifest, const eval::Sample& s) {
  auto clip = prep::load_clip(eval::resolve(manifest, s.clip_path));
  const int T = clip.frame_count();
  clip.subject_id = s.subject_id;
  clip.label = s.label;
  clip.onset = s.onset;
  clip.offset = s.offset >= 0 ? s.offset : T - 1;
  clip.apex = s.apex >= 0 ? s.apex : prep::midpoint_apex(clip.onset, clip.offset);
  prep::validate_clip(clip);
  return clip;
}

// Runs fn(i) for i in [0, n) on `workers` threads.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  auto loop = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  const int w = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (w == 1) {
    loop();
    return;
  }
  std::vector<std::thread> threads;
  for (int k = 0; k < w; ++k) threads.emplace_back(loop);
  for (auto& t : threads) t.join();
}

void write_image_msmt(const fs::path& path, const imaging::Image& img) {
  diffmath::write_msmt(path,
                       {static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width),
                        static_cast<std::size_t>(img.channels)},
                       img.pixels);
}

imaging::Image read_image_msmt(const fs::path& path) {
  auto raw = diffmath::read_msmt(path);
  if (raw.shape.size() != 3) throw diffmath::MsmtFormatError(path.string() + ": expected an H x W x C image");
  imaging::Image img(static_cast<int>(raw.shape[0]), static_cast<int>(raw.shape[1]), static_cast<int>(raw.shape[2]));
  img.pixels = std::move(raw.values);
  return img;
}

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

std::string read_text(const fs::path& p) {
  const auto b = diffmath::read_file_bytes(p);
  return {b.begin(), b.end()};
}

std::uint64_t seed_from_digest(const std::string& hex) { return std::stoull(hex.substr(0, 16), nullptr, 16); }

// One cached modality image of one (possibly augmented) clip.
struct CacheEntry {
  fs::path file;
  std::string key;
};

struct FeatureJob {
  std::string stem;                          // <id> or <id>.aug<k>
  std::optional<std::uint64_t> augment_seed;
};

std::vector<FeatureJob> feature_jobs(const RunConfig& config, const eval::Sample& s) {
  std::vector<FeatureJob> jobs{{s.id, std::nullopt}};
  for (int k = 0; k < config.prep.augment_copies; ++k) {
    const std::string tag = s.id + "|" + std::to_string(k) + "|" + std::to_string(config.train.seed);
    jobs.push_back({s.id + ".aug" + std::to_string(k + 1), seed_from_digest(sha256_hex(bytes_of(tag)))});
  }
  return jobs;
}

json augment_json(const RunConfig& config, const std::optional<std::uint64_t>& seed) {
  if (!seed) return nullptr;
  const auto& a = config.prep.augment;
  return {{"seed", *seed},
          {"max_rotation_deg", a.max_rotation_deg},
          {"flip_probability", a.flip_probability},
          {"scale_lo", a.scale_lo},
          {"scale_hi", a.scale_hi}};
}

std::pair<CacheEntry, CacheEntry> cache_entries(const RunConfig& config, const fs::path& dir,
                                                const std::string& clip_digest, const eval::Sample& s,
                                                const FeatureJob& job) {
  const json full = config.to_json();
  const json annotation = {{"onset", s.onset}, {"apex", s.apex}, {"offset", s.offset}};
  const json aug = augment_json(config, job.augment_seed);
  const json dyn = {{"kind", "dyn"}, {"clip", clip_digest}, {"annotation", annotation}, {"augment", aug},
                    {"params", full["dynimg"]}};
  const json flow = {{"kind", "flowos"}, {"clip", clip_digest}, {"annotation", annotation}, {"augment", aug},
                     {"params", full["flow"]}};
  return {{dir / (job.stem + ".dyn.msmt"), sha256_hex(bytes_of(dyn.dump()))},
          {dir / (job.stem + ".flowos.msmt"), sha256_hex(bytes_of(flow.dump()))}};
}

bool cache_hit(const CacheEntry& e) {
  const fs::path key = fs::path(e.file.string() + ".key");
  if (!fs::exists(e.file) || !fs::exists(key) || read_text(key) != e.key) return false;
  try {
    read_image_msmt(e.file);
    return true;
  } catch (const std::exception& ex) {
    spdlog::warn("unreadable cache file {}, recomputing: {}", e.file.string(), ex.what());
    return false;
  }
}

void store(const CacheEntry& e, const imaging::Image& img) {
  write_image_msmt(e.file, img);
  diffmath::write_file_atomic(fs::path(e.file.string() + ".key"), e.key);
}

int effective_workers(const RunConfig& config) { return config.workers; }

// Features for every sample of the working manifest, computing missing ones.
std::vector<eval::LabeledFeatures> collect_features(const RunConfig& config, const fs::path& out,
                                                    const std::vector<eval::Sample>& samples,
                                                    const fs::path& manifest, FeatureStats& stats) {
  const fs::path dir = out / "features";
  fs::create_directories(dir);
  std::vector<eval::LabeledFeatures> data(samples.size());
  std::vector<std::string> errors(samples.size());
  std::mutex mu;
  parallel_for(samples.size(), effective_workers(config), [&](std::size_t i) {
    const auto& s = samples[i];
    try {
      const fs::path clip_path = eval::resolve(manifest, s.clip_path);
      std::vector<std::uint8_t> bytes = diffmath::read_file_bytes(clip_path);
      if (fs::exists(prep::sidecar_path(clip_path))) {
        const auto side = diffmath::read_file_bytes(prep::sidecar_path(clip_path));
        bytes.insert(bytes.end(), side.begin(), side.end());
      }
      const std::string digest = sha256_hex(bytes);
      std::optional<prep::VideoClip> clip;
      data[i].label = s.label;
      for (const auto& job : feature_jobs(config, s)) {
        const auto [dyn, flow] = cache_entries(config, dir, digest, s, job);
        const bool dyn_hit = cache_hit(dyn), flow_hit = cache_hit(flow);
        eval::SampleFeatures f;
        std::size_t computed = 0;
        if (!dyn_hit || !flow_hit) {
          if (!clip) clip = load_annotated(manifest, s);
          const prep::VideoClip src =
              job.augment_seed ? prep::augment(*clip, *job.augment_seed, config.prep.augment) : *clip;
          if (!dyn_hit) {
            f.dynamic = dynimg::dynamic_image(src, config.features.dynimg).image;
            store(dyn, f.dynamic);
            ++computed;
          }
          if (!flow_hit) {
            f.flow_os = flow::flow_os_image(src, config.features.flow);
            store(flow, f.flow_os);
            ++computed;
          }
        }
        if (dyn_hit) f.dynamic = read_image_msmt(dyn.file);
        if (flow_hit) f.flow_os = read_image_msmt(flow.file);
        {
          std::lock_guard lock(mu);
          stats.computed += computed;
          stats.cached += (dyn_hit ? 1 : 0) + (flow_hit ? 1 : 0);
        }
        if (job.augment_seed) {
          data[i].augmented.push_back(std::move(f));
        } else {
          data[i].features = std::move(f);
        }
      }
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!errors[i].empty()) {
      spdlog::error("features for {} failed: {}", samples[i].id, errors[i]);
      ++stats.failed;
    }
  }
  return data;
}

void print_metrics_table(const eval::LosoResult& r) {
  std::printf("%-12s %8s %8s %8s\n", "", "Acc", "UAR", "UF1");
  for (const auto& [source, m] : r.per_source) {
    std::printf("%-12s %8.4f %8.4f %8.4f\n", source.empty() ? "unknown" : source.c_str(), m.acc, m.uar, m.uf1);
  }
  std::printf("%-12s %8.4f %8.4f %8.4f\n", "pooled", r.aggregate.acc, r.aggregate.uar, r.aggregate.uf1);
  std::printf("train accuracy %.4f over %zu fold(s)\n", r.train_acc, r.folds.size());
}

}  // namespace

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

int cmd_gen_synth(const RunConfig& config, const fs::path& out) {
  eval::SyntheticSpec spec = config.data.synthetic;
  spec.seed = config.train.seed;
  const auto items = eval::gen_synthetic(spec);
  fs::create_directories(out / "clips");
  std::vector<eval::Sample> samples;
  for (const auto& it : items) {
    prep::save_clip(out / it.sample.clip_path, it.clip);
    samples.push_back(it.sample);
  }
  eval::write_manifest(out / "manifest.json", samples);
  spdlog::info("wrote {} clips and {}", samples.size(), (out / "manifest.json").string());
  return kExitOk;
}

int cmd_preprocess(const RunConfig& config, const fs::path& out) {
  const fs::path manifest = source_manifest(config, out);
  const auto samples = load_samples(config, manifest);
  const fs::path dir = out / "preprocessed";
  fs::create_directories(dir);
  const int size = config.prep.crop_size > 0 ? config.prep.crop_size : config.model.image_size;
  std::vector<std::optional<eval::Sample>> done(samples.size());
  parallel_for(samples.size(), effective_workers(config), [&](std::size_t i) {
    const auto& s = samples[i];
    try {
      auto clip = load_annotated(manifest, s);
      if (config.prep.align) {
        if (!s.landmarks_path) throw PipelineError("no landmarks_path while alignment is enabled");
        const fs::path lm = eval::resolve(manifest, *s.landmarks_path);
        if (!fs::exists(lm)) throw PipelineError("landmark file not found: " + lm.string());
        clip = prep::align_and_crop(clip, prep::read_landmarks_csv(lm), size, size).clip;
      }
      if (config.prep.evm) clip = prep::evm_magnify(clip, config.prep.evm_options);
      eval::Sample o = s;
      o.clip_path = s.id + ".msmt";
      o.landmarks_path.reset();
      o.onset = clip.onset;
      o.apex = clip.apex;
      o.offset = clip.offset;
      prep::save_clip(dir / o.clip_path, clip);
      done[i] = o;
    } catch (const std::exception& e) {
      spdlog::error("preprocess {} failed: {}", s.id, e.what());
    }
  });
  std::vector<eval::Sample> kept;
  for (auto& d : done) {
    if (d) kept.push_back(*d);
  }
  eval::write_manifest(preprocessed_manifest(out), kept);
  const std::size_t failed = samples.size() - kept.size();
  spdlog::info("preprocessed {} clip(s), {} failed", kept.size(), failed);
  return failed ? kExitPartial : kExitOk;
}

int cmd_features(const RunConfig& config, const fs::path& out, FeatureStats* stats_out) {
  const fs::path manifest = working_manifest(config, out);
  const auto samples = load_samples(config, manifest);
  FeatureStats stats;
  collect_features(config, out, samples, manifest, stats);
  std::printf("features: %zu computed, %zu cached, %zu failed\n", stats.computed, stats.cached, stats.failed);
  if (stats_out) *stats_out = stats;
  return stats.failed ? kExitPartial : kExitOk;
}

int cmd_train(const RunConfig& config, const fs::path& out) {
  const fs::path manifest = working_manifest(config, out);
  const auto samples = load_samples(config, manifest);
  FeatureStats stats;
  const auto data = collect_features(config, out, samples, manifest, stats);
  if (stats.failed) throw PipelineError(std::to_string(stats.failed) + " clip(s) have no features");
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  model::ModelConfig mc = config.model;
  mc.init_seed = config.train.seed;
  auto trained = eval::train_model(mc, config.train, data, all);
  model::save_checkpoint(out / "model", trained.model);
  fs::create_directories(out / "reports");
  const json report = {{"train_acc", trained.train_acc}, {"epoch_loss", trained.epoch_loss}, {"samples", all.size()}};
  diffmath::write_file_atomic(out / "reports" / "train.json", report.dump(2) + "\n");
  std::printf("train accuracy %.4f on %zu samples; checkpoint in %s\n", trained.train_acc, all.size(),
              (out / "model").string().c_str());
  return kExitOk;
}

int cmd_loso(const RunConfig& config, const fs::path& out, bool alpha_sweep, const std::optional<std::string>& fold) {
  const fs::path manifest = working_manifest(config, out);
  const auto samples = load_samples(config, manifest);
  FeatureStats stats;
  const auto data = collect_features(config, out, samples, manifest, stats);
  if (stats.failed) throw PipelineError(std::to_string(stats.failed) + " clip(s) have no features");

  eval::LosoOptions options;
  options.train = config.train;
  options.workers = config.workers;
  options.only_subject = fold;
  const auto result = eval::run_loso(samples, data, config.model, options);

  const fs::path reports = out / "reports";
  fs::create_directories(reports);
  diffmath::write_file_atomic(reports / "folds.csv", eval::fold_csv(result));
  diffmath::write_file_atomic(reports / "aggregate.json", eval::aggregate_json(result, config.data.class_names));
  diffmath::write_file_atomic(reports / "predictions.csv", eval::predictions_csv(result, samples));
  print_metrics_table(result);

  if (alpha_sweep) {
    eval::LosoOptions sweep = options;
    if (config.eval.sweep_epochs > 0) sweep.train.epochs = config.eval.sweep_epochs;
    const auto rows = eval::alpha_sweep(samples, data, config.model, sweep, config.eval.alpha_sweep);
    diffmath::write_file_atomic(reports / "alpha_sweep.csv", eval::sweep_csv(rows));
    std::printf("%s", eval::sweep_csv(rows).c_str());
  }
  return kExitOk;
}

int run_command(const std::string& command, const CommandOptions& options) {
  RunConfig config;
  try {
    config = load_run_config(options.config);
    if (options.seed) config.train.seed = *options.seed;
    if (options.workers) config.workers = *options.workers;
    config.validate();
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitValidation;
  }
  try {
    if (command == "gen-synth") return cmd_gen_synth(config, options.out);
    if (command == "preprocess") return cmd_preprocess(config, options.out);
    if (command == "features") return cmd_features(config, options.out);
    if (command == "train") return cmd_train(config, options.out);
    if (command == "loso") return cmd_loso(config, options.out, options.alpha_sweep, options.fold);
    spdlog::error("unknown command {}", command);
    return kExitValidation;
  } catch (const eval::EvalError& e) {
    spdlog::error("{}", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitInternal;
  }
}

}  // namespace msmmt::app
