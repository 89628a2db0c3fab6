#include "msmmt/eval/loso.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <json.hpp>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "msmmt/diffmath/adamw.hpp"
#include "msmmt/losses/losses.hpp"

namespace msmmt::eval {

namespace {

using diffmath::Tensor;

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  std::mt19937_64 rng(seq);
  return rng();
}

struct Batch {
  std::vector<Tensor<float>> dy, flow;
  std::vector<int> labels;
};

Batch make_batch(const model::ModelConfig& config, const std::vector<const SampleFeatures*>& feats,
                 const std::vector<int>& labels) {
  std::vector<imaging::Image> dy, fo;
  for (const auto* f : feats) {
    dy.push_back(to_model_image(f->dynamic, config.image_size));
    fo.push_back(to_model_image(f->flow_os, config.image_size));
  }
  return {model::prepare_inputs<float>(config, dy), model::prepare_inputs<float>(config, fo), labels};
}

void validate(const TrainOptions& o) {
  if (o.epochs < 1) throw EvalError("epochs must be >= 1");
  if (o.batch_size < 1) throw EvalError("batch_size must be >= 1");
  if (!(o.learning_rate > 0)) throw EvalError("learning_rate must be > 0");
  if (!(o.alpha >= 0 && o.alpha <= 1)) throw EvalError("alpha must be in [0, 1]");
  if (!(o.temperature > 0)) throw EvalError("temperature must be > 0");
}

}  // namespace

TrainResult train_model(const model::ModelConfig& config, const TrainOptions& options,
                        const std::vector<LabeledFeatures>& data, const std::vector<std::size_t>& indices) {
  validate(options);
  if (indices.empty()) throw EvalError("empty training set");
  TrainResult result{model::Model<float>(config), {}, 0};
  auto& net = result.model;

  // Originals and their augmented copies form one pool.
  std::vector<std::pair<const SampleFeatures*, int>> pool;
  for (std::size_t i : indices) {
    pool.emplace_back(&data.at(i).features, data[i].label);
    for (const auto& a : data[i].augmented) pool.emplace_back(&a, data[i].label);
  }

  diffmath::AdamWOptions opt_options;
  opt_options.learning_rate = options.learning_rate;
  opt_options.weight_decay = options.weight_decay;
  diffmath::AdamW<float> optimizer(net.parameters(), opt_options);
  std::mt19937_64 rng(mix(options.seed, config.init_seed, 1));
  model::ForwardContext ctx{true, &rng};
  const auto tau = static_cast<float>(options.temperature);
  const auto alpha = static_cast<float>(options.alpha);

  std::vector<std::size_t> order(pool.size());
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      std::vector<const SampleFeatures*> feats;
      std::vector<int> labels;
      for (std::size_t k = start; k < end; ++k) {
        feats.push_back(pool[order[k]].first);
        labels.push_back(pool[order[k]].second);
      }
      const Batch b = make_batch(config, feats, labels);
      const auto out = net.forward(b.dy, b.flow, ctx);
      const auto ce = losses::cross_entropy(out.logits, b.labels);
      const auto con = losses::contrastive_loss(out.dy_feature, out.flow_feature, tau);
      const auto loss = losses::total_loss(ce, con, alpha);
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
      total += loss.item();
      ++batches;
    }
    result.epoch_loss.push_back(total / static_cast<double>(batches));
    spdlog::debug("epoch {} loss {:.5f}", epoch + 1, result.epoch_loss.back());
  }

  const auto preds = predict(net, data, indices);
  std::size_t correct = 0;
  for (const auto& p : preds) correct += p.prediction == p.label;
  result.train_acc = static_cast<double>(correct) / static_cast<double>(preds.size());
  return result;
}

std::vector<Prediction> predict(const model::Model<float>& net, const std::vector<LabeledFeatures>& data,
                                const std::vector<std::size_t>& indices) {
  constexpr std::size_t kChunk = 32;
  const auto& config = net.config();
  model::ForwardContext ctx{false, nullptr};
  std::vector<Prediction> out;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const std::size_t end = std::min(indices.size(), start + kChunk);
    std::vector<const SampleFeatures*> feats;
    std::vector<int> labels;
    for (std::size_t k = start; k < end; ++k) {
      feats.push_back(&data.at(indices[k]).features);
      labels.push_back(data[indices[k]].label);
    }
    const Batch b = make_batch(config, feats, labels);
    const auto probs = diffmath::softmax(net.forward(b.dy, b.flow, ctx).logits, 1);
    const auto values = probs.data();
    const std::size_t C = probs.shape()[1];
    for (std::size_t r = 0; r < feats.size(); ++r) {
      Prediction p;
      p.index = indices[start + r];
      p.label = labels[r];
      p.scores.assign(values.begin() + static_cast<std::ptrdiff_t>(r * C),
                      values.begin() + static_cast<std::ptrdiff_t>((r + 1) * C));
      p.prediction = static_cast<int>(std::max_element(p.scores.begin(), p.scores.end()) - p.scores.begin());
      out.push_back(std::move(p));
    }
  }
  return out;
}

LosoResult run_loso(const std::vector<Sample>& samples, const std::vector<LabeledFeatures>& data,
                    const model::ModelConfig& config, const LosoOptions& options) {
  if (samples.size() != data.size()) throw EvalError("samples and features differ in length");
  config.validate();
  validate(options.train);
  for (const auto& d : data) {
    if (d.label < 0 || d.label >= config.num_classes) throw EvalError("label outside the model's class range");
  }
  std::vector<Fold> folds = loso_split(samples);
  if (options.only_subject) {
    auto it = std::find_if(folds.begin(), folds.end(),
                           [&](const Fold& f) { return f.test_subject == *options.only_subject; });
    if (it == folds.end()) throw EvalError("no fold for subject '" + *options.only_subject + "'");
    folds = {*it};
  }

  LosoResult result;
  result.folds.resize(folds.size());
  std::vector<std::size_t> fold_ids(folds.size());
  {
    auto all = loso_split(samples);
    for (std::size_t f = 0; f < folds.size(); ++f) {
      fold_ids[f] = static_cast<std::size_t>(
          std::find_if(all.begin(), all.end(), [&](const Fold& g) { return g.test_subject == folds[f].test_subject; }) -
          all.begin());
    }
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(folds.size());
  auto worker = [&] {
    for (std::size_t f = next++; f < folds.size(); f = next++) {
      try {
        model::ModelConfig fold_config = config;
        fold_config.init_seed = mix(options.train.seed, fold_ids[f]);
        const auto& fold = folds[f];
        spdlog::info("fold {} ({}): train {} test {}", fold_ids[f] + 1, fold.test_subject, fold.train.size(),
                     fold.test.size());
        auto trained = train_model(fold_config, options.train, data, fold.train);
        FoldResult& r = result.folds[f];
        r.test_subject = fold.test_subject;
        r.train_size = fold.train.size();
        r.train_acc = trained.train_acc;
        r.epoch_loss = trained.epoch_loss;
        r.predictions = predict(trained.model, data, fold.test);
        std::vector<int> y, p;
        for (const auto& pr : r.predictions) {
          y.push_back(pr.label);
          p.push_back(pr.prediction);
        }
        r.metrics = compute_metrics(y, p, config.num_classes);
        spdlog::info("fold {} ({}): acc {:.4f} train_acc {:.4f}", fold_ids[f] + 1, fold.test_subject, r.metrics.acc,
                     r.train_acc);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  const int n_workers = std::max(1, std::min<int>(options.workers, static_cast<int>(folds.size())));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<int> y, p;
  std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> by_source;
  double train_correct = 0, train_total = 0;
  for (const auto& r : result.folds) {
    for (const auto& pr : r.predictions) {
      y.push_back(pr.label);
      p.push_back(pr.prediction);
      auto& s = by_source[samples[pr.index].source];
      s.first.push_back(pr.label);
      s.second.push_back(pr.prediction);
    }
    train_correct += r.train_acc * static_cast<double>(r.train_size);
    train_total += static_cast<double>(r.train_size);
  }
  result.aggregate = compute_metrics(y, p, config.num_classes);
  result.train_acc = train_total > 0 ? train_correct / train_total : 0;
  for (const auto& [source, yp] : by_source) {
    result.per_source[source] = compute_metrics(yp.first, yp.second, config.num_classes);
  }
  return result;
}

std::vector<SweepRow> alpha_sweep(const std::vector<Sample>& samples, const std::vector<LabeledFeatures>& data,
                                  const model::ModelConfig& config, const LosoOptions& options,
                                  const std::vector<double>& alphas) {
  std::vector<SweepRow> rows;
  for (double a : alphas) {
    LosoOptions o = options;
    o.train.alpha = a;
    spdlog::info("alpha sweep: alpha = {:.2f}", a);
    rows.push_back({a, run_loso(samples, data, config, o).aggregate});
  }
  return rows;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

nlohmann::json metrics_json(const MetricsReport& m, const std::vector<std::string>& names) {
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < m.tp.size(); ++c) {
    per_class.push_back({{"class", c < names.size() ? names[c] : std::to_string(c)},
                         {"tp", m.tp[c]},
                         {"fp", m.fp[c]},
                         {"fn", m.fn[c]},
                         {"n", m.n[c]}});
  }
  return {{"acc", m.acc}, {"uar", m.uar}, {"uf1", m.uf1}, {"num_classes", m.num_classes}, {"per_class", per_class}};
}

}  // namespace

std::string fold_csv(const LosoResult& result) {
  std::ostringstream out;
  out << "fold,test_subject,n_train,n_test,acc,uar,uf1,train_acc\n";
  for (std::size_t f = 0; f < result.folds.size(); ++f) {
    const auto& r = result.folds[f];
    out << f + 1 << ',' << r.test_subject << ',' << r.train_size << ',' << r.predictions.size() << ','
        << fmt(r.metrics.acc) << ',' << fmt(r.metrics.uar) << ',' << fmt(r.metrics.uf1) << ',' << fmt(r.train_acc)
        << '\n';
  }
  return out.str();
}

std::string aggregate_json(const LosoResult& result, const std::vector<std::string>& class_names) {
  nlohmann::json j = metrics_json(result.aggregate, class_names);
  j["train_acc"] = result.train_acc;
  j["folds"] = result.folds.size();
  nlohmann::json sources = nlohmann::json::object();
  for (const auto& [s, m] : result.per_source) sources[s.empty() ? "unknown" : s] = metrics_json(m, class_names);
  j["per_source"] = sources;
  return j.dump(2) + "\n";
}

std::string predictions_csv(const LosoResult& result, const std::vector<Sample>& samples) {
  std::ostringstream out;
  const int C = result.aggregate.num_classes;
  out << "clip_id,subject_id,source,label,prediction";
  for (int c = 0; c < C; ++c) out << ",score_" << c;
  out << '\n';
  for (const auto& r : result.folds) {
    for (const auto& p : r.predictions) {
      const auto& s = samples.at(p.index);
      out << s.id << ',' << s.subject_id << ',' << s.source << ',' << p.label << ',' << p.prediction;
      for (double v : p.scores) out << ',' << fmt(v);
      out << '\n';
    }
  }
  return out.str();
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "alpha,acc,uar,uf1\n";
  for (const auto& r : rows) {
    out << fmt(r.alpha) << ',' << fmt(r.metrics.acc) << ',' << fmt(r.metrics.uar) << ',' << fmt(r.metrics.uf1) << '\n';
  }
  return out.str();
}

}  // namespace msmmt::eval
