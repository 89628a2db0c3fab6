#include <Eigen/Dense>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "msmmt/app/commands.hpp"
#include "msmmt/app/run_config.hpp"
#include "msmmt/diffmath/msmt_io.hpp"
#include "msmmt/diffmath/ops.hpp"
#include "msmmt/dynimg/dynamic_image.hpp"
#include "msmmt/eval/metrics.hpp"
#include "msmmt/flow/flow.hpp"
#include "msmmt/losses/losses.hpp"
#include "msmmt/model/model.hpp"
#include "msmmt/prep/evm.hpp"
#include "support/gradcheck.hpp"

namespace fs = std::filesystem;
namespace dm = msmmt::diffmath;
using msmmt::imaging::Image;
using msmmt::testing::gradcheck;
using msmmt::testing::random_tensor;
using nlohmann::json;
using TD = dm::Tensor<double>;

namespace {

constexpr double kPi = std::numbers::pi;

class Criterion {
 public:
  Criterion(int id, std::string title) : id_(id), title_(std::move(title)), start_(std::chrono::steady_clock::now()) {}

  void check(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  void note(const std::string& s) { notes_.push_back(s); }
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }
  void limit(double max_seconds) {
    const double s = seconds();
    check(s < max_seconds, "runtime " + fmt(s) + " s >= " + fmt(max_seconds) + " s");
  }

  bool report() const {
    const bool pass = failures_.empty();
    std::printf("criterion %d %s: %s (%.1f s)\n", id_, pass ? "PASS" : "FAIL", title_.c_str(), seconds());
    for (const auto& n : notes_) std::printf("    %s\n", n.c_str());
    for (const auto& f : failures_) std::printf("    failed: %s\n", f.c_str());
    std::fflush(stdout);
    return pass;
  }

  static std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
  }

 private:
  int id_;
  std::string title_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

std::string fmt(double v) { return Criterion::fmt(v); }

TD project(const TD& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return dm::sum(dm::mul(y, random_tensor(y.shape(), rng)));
}

// Values at least `gap` away from zero, for ops with a kink there.
TD away_from_zero(dm::Shape shape, std::mt19937_64& rng, double gap = 0.05) {
  auto t = random_tensor(std::move(shape), rng);
  for (auto& v : t.mutable_data()) v = v < 0 ? v - gap : v + gap;
  return t;
}

TD random_attention(std::size_t b, std::size_t h, std::size_t n, std::mt19937_64& rng) {
  return dm::softmax(random_tensor({b, h, n, n}, rng, -2, 2), 3);
}

// ---------------------------------------------------------------- 1

using Fn = std::function<TD(const std::vector<TD>&)>;

struct OpCase {
  std::string name;
  std::function<std::pair<Fn, std::vector<TD>>(std::mt19937_64&, std::uint64_t)> make;
};

std::vector<OpCase> op_cases() {
  namespace ml = msmmt::model;
  namespace ls = msmmt::losses;
  std::vector<OpCase> c;
  auto unary = [&](std::string name, auto op, double lo, double hi) {
    c.push_back({name, [op, lo, hi](std::mt19937_64& rng, std::uint64_t s) {
                   return std::pair<Fn, std::vector<TD>>{
                       [op, s](const std::vector<TD>& in) { return project(op(in[0]), s); },
                       {random_tensor({3, 4}, rng, lo, hi)}};
                 }});
  };
  auto binary = [&](std::string name, auto op, dm::Shape sb, double lo, double hi) {
    c.push_back({name, [op, sb, lo, hi](std::mt19937_64& rng, std::uint64_t s) {
                   return std::pair<Fn, std::vector<TD>>{
                       [op, s](const std::vector<TD>& in) { return project(op(in[0], in[1]), s); },
                       {random_tensor({3, 4}, rng), random_tensor(sb, rng, lo, hi)}};
                 }});
  };
  binary("add", [](const TD& a, const TD& b) { return dm::add(a, b); }, {4}, -1, 1);
  binary("sub", [](const TD& a, const TD& b) { return dm::sub(a, b); }, {3, 4}, -1, 1);
  binary("mul", [](const TD& a, const TD& b) { return dm::mul(a, b); }, {3, 1}, -1, 1);
  binary("div", [](const TD& a, const TD& b) { return dm::div(a, b); }, {4}, 0.5, 2);
  unary("add_scalar", [](const TD& a) { return dm::add(a, 0.7); }, -1, 1);
  unary("mul_scalar", [](const TD& a) { return dm::mul(a, -1.3); }, -1, 1);
  unary("neg", [](const TD& a) { return dm::neg(a); }, -1, 1);
  unary("pow", [](const TD& a) { return dm::pow(a, 2.5); }, 0.2, 2);
  unary("exp", [](const TD& a) { return dm::exp(a); }, -2, 2);
  unary("log", [](const TD& a) { return dm::log(a); }, 0.2, 2);
  unary("sqrt", [](const TD& a) { return dm::sqrt(a); }, 0.2, 2);
  unary("gelu", [](const TD& a) { return dm::gelu(a); }, -3, 3);
  c.push_back({"relu", [](std::mt19937_64& rng, std::uint64_t s) {
                 return std::pair<Fn, std::vector<TD>>{
                     [s](const std::vector<TD>& in) { return project(dm::relu(in[0]), s); },
                     {away_from_zero({3, 4}, rng)}};
               }});
  c.push_back({"matmul", [](std::mt19937_64& rng, std::uint64_t s) {
                 return std::pair<Fn, std::vector<TD>>{
                     [s](const std::vector<TD>& in) { return project(dm::matmul(in[0], in[1]), s); },
                     {random_tensor({4, 5}, rng), random_tensor({5, 3}, rng)}};
               }});
  c.push_back({"matmul_batched", [](std::mt19937_64& rng, std::uint64_t s) {
                 return std::pair<Fn, std::vector<TD>>{
                     [s](const std::vector<TD>& in) { return project(dm::matmul(in[0], in[1]), s); },
                     {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 2}, rng)}};
               }});
  c.push_back({"matmul_shared", [](std::mt19937_64& rng, std::uint64_t s) {
                 return std::pair<Fn, std::vector<TD>>{
                     [s](const std::vector<TD>& in) { return project(dm::matmul(in[0], in[1]), s); },
                     {random_tensor({2, 3, 4}, rng), random_tensor({4, 2}, rng)}};
               }});
  auto shaped = [&](std::string name, auto op) {
    c.push_back({name, [op](std::mt19937_64& rng, std::uint64_t s) {
                   return std::pair<Fn, std::vector<TD>>{
                       [op, s](const std::vector<TD>& in) { return project(op(in[0]), s); },
                       {random_tensor({2, 3, 4}, rng, -2, 2)}};
                 }});
  };
  shaped("transpose", [](const TD& x) { return dm::transpose(x); });
  shaped("permute", [](const TD& x) { return dm::permute(x, {2, 0, 1}); });
  shaped("reshape", [](const TD& x) { return dm::reshape(x, {6, 4}); });
  shaped("slice", [](const TD& x) { return dm::slice(x, 1, 1, 2); });
  shaped("sum", [](const TD& x) { return dm::sum(x); });
  shaped("mean", [](const TD& x) { return dm::mean(x); });
  shaped("sum_axis", [](const TD& x) { return dm::sum(x, 1, false); });
  shaped("mean_axis", [](const TD& x) { return dm::mean(x, 2, true); });
  shaped("max_axis", [](const TD& x) { return dm::max(x, -1, true); });
  shaped("softmax", [](const TD& x) { return dm::softmax(x, -1); });
  shaped("softmax_axis1", [](const TD& x) { return dm::softmax(x, 1); });
  shaped("log_softmax", [](const TD& x) { return dm::log_softmax(x, -1); });
  c.push_back({"concat", [](std::mt19937_64& rng, std::uint64_t s) {
                 return std::pair<Fn, std::vector<TD>>{
                     [s](const std::vector<TD>& in) { return project(dm::concat<double>({in[0], in[1]}, 1), s); },
                     {random_tensor({2, 3, 4}, rng), random_tensor({2, 2, 4}, rng)}};
               }});
  c.push_back({"layernorm", [](std::mt19937_64& rng, std::uint64_t s) {
                 return std::pair<Fn, std::vector<TD>>{
                     [s](const std::vector<TD>& in) { return project(dm::layernorm(in[0], in[1], in[2], 1e-5), s); },
                     {random_tensor({3, 6}, rng, -2, 2), random_tensor({6}, rng, 0.5, 1.5), random_tensor({6}, rng)}};
               }});
  c.push_back({"dropout", [](std::mt19937_64& rng, std::uint64_t s) {
                 return std::pair<Fn, std::vector<TD>>{
                     [s](const std::vector<TD>& in) {
                       std::mt19937_64 mask(s);
                       return project(dm::dropout(in[0], 0.3, true, mask), s);
                     },
                     {random_tensor({4, 5}, rng)}};
               }});
  c.push_back({"attention_normalize", [](std::mt19937_64& rng, std::uint64_t s) {
                 return std::pair<Fn, std::vector<TD>>{
                     [s](const std::vector<TD>& in) {
                       return project(ml::layer_attention_normalize(in[0], ml::LayerNormalization::RowMean), s);
                     },
                     {random_attention(2, 3, 5, rng)}};
               }});
  c.push_back({"attention_rollup", [](std::mt19937_64& rng, std::uint64_t s) {
                 return std::pair<Fn, std::vector<TD>>{
                     [s](const std::vector<TD>& in) { return project(ml::attention_rollup(in), s); },
                     {random_tensor({2, 5, 5}, rng, 0.2, 2), random_tensor({2, 5, 5}, rng, 0.2, 2),
                      random_tensor({2, 5, 5}, rng, 0.2, 2)}};
               }});
  c.push_back({"patch_importance", [](std::mt19937_64& rng, std::uint64_t s) {
                 return std::pair<Fn, std::vector<TD>>{
                     [s](const std::vector<TD>& in) {
                       return project(ml::patch_importance(in[0], ml::ImportanceAxis::ColumnMean), s);
                     },
                     {random_tensor({2, 6, 6}, rng, 0.2, 2)}};
               }});
  c.push_back({"weight_patch_tokens", [](std::mt19937_64& rng, std::uint64_t s) {
                 return std::pair<Fn, std::vector<TD>>{
                     [s](const std::vector<TD>& in) { return project(ml::weight_patch_tokens(in[0], in[1]), s); },
                     {random_tensor({2, 5, 3}, rng), random_tensor({2, 4}, rng, 0.1, 1)}};
               }});
  c.push_back({"cross_entropy", [](std::mt19937_64& rng, std::uint64_t) {
                 std::vector<int> labels;
                 for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng() % 3));
                 return std::pair<Fn, std::vector<TD>>{
                     [labels](const std::vector<TD>& in) { return ls::cross_entropy(in[0], labels); },
                     {random_tensor({4, 3}, rng, -2, 2)}};
               }});
  c.push_back({"contrastive", [](std::mt19937_64& rng, std::uint64_t) {
                 return std::pair<Fn, std::vector<TD>>{
                     [](const std::vector<TD>& in) { return ls::contrastive_loss(in[0], in[1], 0.1); },
                     {random_tensor({4, 6}, rng), random_tensor({4, 6}, rng)}};
               }});
  c.push_back({"total_loss", [](std::mt19937_64& rng, std::uint64_t) {
                 return std::pair<Fn, std::vector<TD>>{
                     [](const std::vector<TD>& in) {
                       return ls::total_loss(dm::sum(dm::mul(in[0], in[0])), dm::sum(dm::exp(in[1])), 0.3);
                     },
                     {random_tensor({3}, rng), random_tensor({3}, rng)}};
               }});
  return c;
}

msmmt::model::ModelConfig tiny_config(std::uint64_t seed) {
  msmmt::model::ModelConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.scales = {1, 2};
  c.layers = 3;
  c.heads = 2;
  c.embed_dim = 8;
  c.mlp_ratio = 2;
  c.head_hidden = 8;
  c.dropout_rate = 0.0;
  c.init_seed = seed;
  return c;
}

Image random_image(int size, int channels, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(size, size, channels);
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

bool criterion_gradients() {
  Criterion cr(1, "gradient suite");
  const int seeds = 30;
  const auto cases = op_cases();
  double worst_op = 0;
  std::string worst_name;
  for (const auto& oc : cases) {
    for (int s = 0; s < seeds; ++s) {
      std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(s));
      auto [f, inputs] = oc.make(rng, static_cast<std::uint64_t>(s));
      const double err = gradcheck(f, inputs, 1e-5);
      if (err > worst_op) {
        worst_op = err;
        worst_name = oc.name;
      }
      cr.check(err <= 1e-5, oc.name + " seed " + std::to_string(s) + " rel err " + fmt(err));
    }
  }
  cr.note(std::to_string(cases.size()) + " ops x " + std::to_string(seeds) + " seeds, worst " + fmt(worst_op) +
          " (" + worst_name + ")");

  namespace ml = msmmt::model;
  namespace ls = msmmt::losses;
  double worst_e2e = 0;
  std::set<std::string> covered;
  std::size_t total_params = 0;
  for (int s = 0; s < seeds; ++s) {
    const auto cfg = tiny_config(static_cast<std::uint64_t>(s));
    ml::Model<double> m(cfg);
    for (int mod : {ml::kDynamic, ml::kFlowOs})
      for (auto& b : m.encoder(mod).blocks)
        for (auto& v : b.qkv.weight.mutable_data()) v *= 5;
    std::mt19937_64 rng(2000 + static_cast<std::uint64_t>(s));
    std::vector<Image> dy_img, fo_img;
    for (int i = 0; i < 3; ++i) dy_img.push_back(random_image(cfg.image_size, 3, rng));
    for (int i = 0; i < 3; ++i) fo_img.push_back(random_image(cfg.image_size, 3, rng));
    const auto dy = ml::prepare_inputs<double>(cfg, dy_img);
    const auto fo = ml::prepare_inputs<double>(cfg, fo_img);
    const std::vector<int> labels{s % 3, (s + 1) % 3, (s + 2) % 3};
    const auto params = m.named_parameters();
    total_params = params.size();
    std::vector<TD> inputs;
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (static_cast<int>(k % 10) == s % 10) {
        inputs.push_back(params[k].second);
        covered.insert(params[k].first);
      }
    }
    const double err = gradcheck(
        [&](const std::vector<TD>&) {
          const auto out = m.forward(dy, fo, {});
          return ls::total_loss(ls::cross_entropy(out.logits, labels),
                                ls::contrastive_loss(out.dy_feature, out.flow_feature, 0.1), 0.1);
        },
        inputs, 1e-5);
    worst_e2e = std::max(worst_e2e, err);
    cr.check(err <= 1e-3, "end-to-end seed " + std::to_string(s) + " rel err " + fmt(err));
  }
  cr.check(covered.size() == total_params, "end-to-end covered " + std::to_string(covered.size()) + " of " +
                                               std::to_string(total_params) + " parameter tensors");
  cr.note("end-to-end: " + std::to_string(seeds) + " seeds, " + std::to_string(covered.size()) +
          " parameter tensors, worst " + fmt(worst_e2e));
  cr.limit(120);
  return cr.report();
}

// ---------------------------------------------------------------- 2

using msmmt::dynimg::Vector;

std::vector<Vector> random_frames(int t, int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Vector> f(static_cast<std::size_t>(t), Vector(static_cast<std::size_t>(n)));
  for (auto& v : f)
    for (auto& x : v) x = u(rng);
  return f;
}

// Dual box QP over pair multipliers, solved by enumerating lower/upper/free states.
Vector oracle_minimizer(const std::vector<Vector>& features, double lambda) {
  const int t_count = static_cast<int>(features.size());
  const int n = static_cast<int>(features.front().size());
  const double w = 2.0 / (t_count * (t_count - 1));
  std::vector<Eigen::VectorXd> phis;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
  for (int t = 0; t < t_count; ++t) {
    acc += Eigen::Map<const Eigen::VectorXd>(features[static_cast<std::size_t>(t)].data(), n);
    phis.push_back(acc / (t + 1));
  }
  std::vector<Eigen::VectorXd> deltas;
  for (std::size_t t = 0; t < phis.size(); ++t)
    for (std::size_t l = t + 1; l < phis.size(); ++l) deltas.push_back(phis[l] - phis[t]);
  const int p = static_cast<int>(deltas.size());
  Eigen::MatrixXd k(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) k(i, j) = deltas[static_cast<std::size_t>(i)].dot(deltas[static_cast<std::size_t>(j)]);
  double best = -1e300;
  Eigen::VectorXd best_a = Eigen::VectorXd::Zero(p);
  int combos = 1;
  for (int i = 0; i < p; ++i) combos *= 3;
  for (int c = 0; c < combos; ++c) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(p);
    std::vector<int> free_idx;
    for (int i = 0, r = c; i < p; ++i, r /= 3) {
      if (r % 3 == 1) a(i) = w;
      if (r % 3 == 2) free_idx.push_back(i);
    }
    if (!free_idx.empty()) {
      const int f = static_cast<int>(free_idx.size());
      Eigen::MatrixXd kff(f, f);
      Eigen::VectorXd rhs(f);
      for (int i = 0; i < f; ++i) {
        rhs(i) = lambda - k.row(free_idx[static_cast<std::size_t>(i)]).dot(a);
        for (int j = 0; j < f; ++j) kff(i, j) = k(free_idx[static_cast<std::size_t>(i)], free_idx[static_cast<std::size_t>(j)]);
      }
      if (std::abs(kff.determinant()) < 1e-14) continue;
      const Eigen::VectorXd af = kff.lu().solve(rhs);
      bool ok = true;
      for (int i = 0; i < f; ++i) {
        if (af(i) < -1e-12 || af(i) > w + 1e-12) ok = false;
        a(free_idx[static_cast<std::size_t>(i)]) = af(i);
      }
      if (!ok) continue;
    }
    const double dual = a.sum() - a.dot(k * a) / (2 * lambda);
    if (dual > best) {
      best = dual;
      best_a = a;
    }
  }
  Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < p; ++i) d += best_a(i) * deltas[static_cast<std::size_t>(i)];
  d /= lambda;
  return Vector(d.data(), d.data() + n);
}

double kendall_tau(const std::vector<double>& s) {
  int conc = 0, disc = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = i + 1; j < s.size(); ++j) (s[j] > s[i] ? conc : disc)++;
  return static_cast<double>(conc - disc) / (conc + disc);
}

bool criterion_rank_pooling() {
  namespace di = msmmt::dynimg;
  Criterion cr(2, "rank pooling");

  const auto constant = di::rank_pool({std::vector<Vector>(6, Vector{0.3, 0.3, 0.9, 0.1}), 1.0});
  double norm = 0;
  for (double v : constant.d) norm += v * v;
  cr.check(std::sqrt(norm) < 1e-6, "constant video |d| = " + fmt(std::sqrt(norm)));

  std::mt19937_64 rng(77);
  double worst = 0;
  for (int i = 0; i < 20; ++i) {
    di::RankPoolProblem p{random_frames(3, 4, rng), 1.0};
    const auto r = di::rank_pool(p, {200000, 1e-3});
    const double gap = std::abs(r.objective - di::rank_pool_objective(p, oracle_minimizer(p.features, 1.0)));
    worst = std::max(worst, gap);
    cr.check(gap <= 1e-3, "oracle instance " + std::to_string(i) + " objective gap " + fmt(gap));
  }
  cr.note("20 oracle instances, worst objective gap " + fmt(worst));

  std::vector<Vector> ramp;
  for (int t = 1; t <= 8; ++t) ramp.push_back(Vector(12, 0.05 * t));
  const auto r = di::rank_pool({ramp, 1.0});
  std::vector<double> s;
  for (int t = 1; t <= 8; ++t) s.push_back(di::rank_score(r.d, di::temporal_mean(ramp, t)));
  cr.check(kendall_tau(s) == 1.0, "ramp Kendall tau " + fmt(kendall_tau(s)));

  double worst_cf = 0;
  for (double scale : {0.3, 3.0}) {
    auto f = random_frames(2, 5, rng);
    for (auto& x : f[1]) x += scale * 0.5;
    Vector delta(5);
    double n2 = 0;
    for (std::size_t i = 0; i < 5; ++i) {
      delta[i] = 0.5 * (f[1][i] - f[0][i]);
      n2 += delta[i] * delta[i];
    }
    const double a = std::min(1.0, 1.0 / n2);
    const auto rr = di::rank_pool({f, 1.0}, {100000, 1e-3});
    for (std::size_t i = 0; i < 5; ++i) worst_cf = std::max(worst_cf, std::abs(rr.d[i] - a * delta[i]));
  }
  cr.check(worst_cf <= 1e-3, "T=2 closed form max error " + fmt(worst_cf));
  cr.note("T=2 closed form max error " + fmt(worst_cf));
  cr.limit(60);
  return cr.report();
}

// ---------------------------------------------------------------- 3, 4

Image smooth_noise(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(h, w, 1);
  for (auto& p : img.pixels) p = u(rng);
  img = msmmt::imaging::gaussian_blur(img, 2.0);
  const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  const float l = *lo, r = *hi - *lo;
  for (auto& p : img.pixels) p = (p - l) / r;
  return img;
}

bool criterion_tvl1() {
  namespace fl = msmmt::flow;
  Criterion cr(3, "TV-L1 flow");
  auto timed = [&](const Image& a, const Image& b) {
    const auto t0 = std::chrono::steady_clock::now();
    auto f = fl::tvl1_flow(a, b);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    cr.check(s < 10, "pair took " + fmt(s) + " s");
    return f;
  };

  const auto img = smooth_noise(64, 64, 3);
  const auto zero = timed(img, img);
  double mx = 0;
  for (std::size_t k = 0; k < zero.u.data.size(); ++k)
    mx = std::max({mx, std::abs(zero.u.data[k]), std::abs(zero.v.data[k])});
  cr.check(mx < 1e-3, "identical frames max flow " + fmt(mx));

  const int size = 64, pad = 16, dx = 3, dy = -2;
  const auto tex = smooth_noise(size + 2 * pad, size + 2 * pad, 7);
  Image i0(size, size, 1), i1(size, size, 1);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      i0.at(y, x) = tex.at(y + pad, x + pad);
      i1.at(y, x) = tex.at(y + pad - dy, x + pad - dx);
    }
  const auto f = timed(i0, i1);
  double epe = 0;
  int n = 0;
  for (int y = 4; y < size - 4; ++y)
    for (int x = 4; x < size - 4; ++x, ++n) epe += std::hypot(f.u.at(y, x) - dx, f.v.at(y, x) - dy);
  epe /= n;
  cr.check(epe < 0.3, "translation interior EPE " + fmt(epe));
  cr.note("identical max flow " + fmt(mx) + " px, translation EPE " + fmt(epe) + " px");
  return cr.report();
}

bool criterion_strain() {
  namespace fl = msmmt::flow;
  Criterion cr(4, "optical strain");
  auto field = [](int h, int w, auto fu, auto fv) {
    fl::FlowField f{fl::Field(h, w), fl::Field(h, w)};
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        f.u.at(y, x) = fu(y, x);
        f.v.at(y, x) = fv(y, x);
      }
    return f;
  };

  const auto rigid = fl::strain(field(20, 24, [](int, int) { return 2.5; }, [](int, int) { return -1.5; }));
  const double mx = *std::max_element(rigid.eps.data.begin(), rigid.eps.data.end());
  cr.check(mx < 1e-6, "rigid translation max eps " + fmt(mx));

  const auto lin = fl::strain(field(20, 24, [](int, int x) { return 0.1 * x; }, [](int, int) { return 0.0; }));
  double worst = 0;
  for (int y = 1; y < 19; ++y)
    for (int x = 1; x < 23; ++x) worst = std::max(worst, std::abs(lin.eps_xx.at(y, x) - 0.1));
  cr.check(worst <= 1e-4, "u = 0.1x interior eps_xx error " + fmt(worst));

  const auto s = fl::strain(field(
      20, 24, [](int y, int x) { return std::sin(0.3 * x) * std::cos(0.2 * y); },
      [](int y, int x) { return 0.5 * std::cos(0.25 * x + 0.1 * y); }));
  double rec = 0;
  for (std::size_t k = 0; k < s.eps.data.size(); ++k) {
    const double sq = s.eps_xx.data[k] * s.eps_xx.data[k] + s.eps_yy.data[k] * s.eps_yy.data[k] +
                      s.eps_xy.data[k] * s.eps_xy.data[k] + s.eps_yx.data[k] * s.eps_yx.data[k];
    rec = std::max(rec, std::abs(s.eps.data[k] - std::sqrt(sq)));
  }
  cr.check(rec <= 1e-6, "magnitude recomposition error " + fmt(rec));
  cr.note("rigid " + fmt(mx) + ", eps_xx error " + fmt(worst) + ", recomposition " + fmt(rec));
  return cr.report();
}

// ---------------------------------------------------------------- 5

bool criterion_fusion() {
  namespace ml = msmmt::model;
  Criterion cr(5, "attention fusion");
  const std::size_t n = 7;

  std::vector<TD> uniform;
  for (int l = 0; l < 3; ++l)
    uniform.push_back(ml::layer_attention_normalize(TD::full({2, 3, n, n}, 1.0 / n), ml::LayerNormalization::RowMean));
  const auto g_uniform = ml::patch_importance(ml::attention_rollup(uniform), ml::ImportanceAxis::ColumnMean);
  double dev = 0;
  for (double v : g_uniform.data()) dev = std::max(dev, std::abs(v - 1.0));
  cr.check(dev <= 1e-6, "uniform stack importance deviation " + fmt(dev));
  std::mt19937_64 rng(5);
  const auto z = random_tensor({2, n, 4}, rng);
  const auto same = ml::weight_patch_tokens(z, g_uniform);
  double id = 0;
  for (std::size_t i = 0; i < z.numel(); ++i) id = std::max(id, std::abs(same.data()[i] - z.data()[i]));
  cr.check(id <= 1e-6, "uniform reweighting deviation " + fmt(id));

  // Zero qkv weights in a real encoder give uniform attention end to end.
  ml::ModelConfig cfg = tiny_config(1);
  cfg.image_size = 32;
  ml::Model<double> m(cfg);
  for (auto& b : m.encoder(ml::kDynamic).blocks)
    for (auto& v : b.qkv.weight.mutable_data()) v = 0;
  std::vector<ml::ScaleTrace<double>> trace;
  m.modality_feature(ml::kDynamic, ml::prepare_inputs<double>(cfg, {random_image(32, 3, rng)}), {}, &trace);
  double model_dev = 0;
  for (const auto& st : trace)
    for (double v : st.importance.data()) model_dev = std::max(model_dev, std::abs(v - 1.0));
  cr.check(model_dev <= 1e-6, "zero-qkv encoder importance deviation " + fmt(model_dev));

  double row_sum = 0, row_mean = 0, min_g = 1e300;
  bool max_exact = true;
  for (int trial = 0; trial < 10; ++trial) {
    ml::Model<double> rm(tiny_config(100 + static_cast<std::uint64_t>(trial)));
    for (auto& b : rm.encoder(ml::kFlowOs).blocks)
      for (auto& v : b.qkv.weight.mutable_data()) v *= 5;
    std::vector<ml::ScaleTrace<double>> tr;
    rm.modality_feature(ml::kFlowOs,
                        ml::prepare_inputs<double>(rm.config(), {random_image(16, 3, rng), random_image(16, 3, rng)}), {},
                        &tr);
    for (const auto& st : tr) {
      for (const auto& a : st.encoder.attention) {
        const std::size_t rows = a.numel() / a.shape().back(), w = a.shape().back();
        for (std::size_t r = 0; r < rows; ++r) {
          double s = 0;
          for (std::size_t j = 0; j < w; ++j) s += a.data()[r * w + j];
          row_sum = std::max(row_sum, std::abs(s - 1.0));
        }
        const auto g = ml::layer_attention_normalize(a, ml::LayerNormalization::RowMean);
        const std::size_t grows = g.numel() / w;
        for (std::size_t r = 0; r < grows; ++r) {
          double s = 0;
          for (std::size_t j = 0; j < w; ++j) s += g.data()[r * w + j];
          row_mean = std::max(row_mean, std::abs(s / static_cast<double>(w) - 1.0));
        }
      }
      const std::size_t b = st.importance.dim(0), np = st.importance.dim(1);
      for (std::size_t i = 0; i < b; ++i) {
        double mx = 0;
        for (std::size_t j = 0; j < np; ++j) {
          mx = std::max(mx, st.importance.at({i, j}));
          min_g = std::min(min_g, st.importance.at({i, j}));
        }
        if (mx != 1.0) max_exact = false;
      }
    }
  }
  cr.check(row_sum <= 1e-5, "attention row-sum deviation " + fmt(row_sum));
  cr.check(row_mean <= 1e-6, "normalized row-mean deviation " + fmt(row_mean));
  cr.check(max_exact, "max importance not exactly 1");
  cr.check(min_g > 0, "min importance " + fmt(min_g));

  std::vector<TD> layers;
  for (int l = 0; l < 5; ++l)
    layers.push_back(ml::layer_attention_normalize(random_attention(1, 2, 9, rng), ml::LayerNormalization::RowMean));
  const auto left = ml::attention_rollup(layers);
  const auto right = dm::matmul(dm::matmul(layers[4], dm::matmul(layers[3], layers[2])), dm::matmul(layers[1], layers[0]));
  double assoc = 0;
  for (std::size_t i = 0; i < left.numel(); ++i)
    assoc = std::max(assoc, std::abs(left.data()[i] - right.data()[i]) / std::abs(right.data()[i]));
  cr.check(assoc <= 1e-4, "associativity relative error " + fmt(assoc));
  cr.note("row-sum " + fmt(row_sum) + ", row-mean " + fmt(row_mean) + ", min importance " + fmt(min_g) +
          ", associativity " + fmt(assoc));
  return cr.report();
}

// ---------------------------------------------------------------- 6

double naive_anchor(const TD& dy, const TD& fo, std::size_t i, bool dy_anchor, double tau) {
  const std::size_t b = dy.dim(0), k = dy.dim(1);
  auto cos = [&](const TD& a, std::size_t ia, const TD& c, std::size_t ic) {
    double ab = 0, aa = 0, cc = 0;
    for (std::size_t d = 0; d < k; ++d) {
      ab += a.at({ia, d}) * c.at({ic, d});
      aa += a.at({ia, d}) * a.at({ia, d});
      cc += c.at({ic, d}) * c.at({ic, d});
    }
    return ab / std::sqrt(aa * cc);
  };
  const TD& p = dy_anchor ? dy : fo;
  const TD& q = dy_anchor ? fo : dy;
  const double num = std::exp(cos(p, i, q, i) / tau);
  double den = 0;
  for (std::size_t kk = 0; kk < b; ++kk)
    if (kk != i) den += std::exp(cos(p, i, q, kk) / tau);
  for (std::size_t kk = 0; kk < b; ++kk) den += std::exp(cos(p, kk, q, i) / tau);
  return -std::log(num / den);
}

bool criterion_losses() {
  namespace ls = msmmt::losses;
  Criterion cr(6, "losses");
  std::mt19937_64 rng(9);
  double oracle = 0, swap = 0;
  for (std::size_t b : {1u, 2u, 4u, 8u}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto dy = random_tensor({b, 16}, rng), fo = random_tensor({b, 16}, rng);
      double want = 0;
      for (std::size_t i = 0; i < b; ++i) {
        for (bool dy_anchor : {true, false}) {
          const double w = naive_anchor(dy, fo, i, dy_anchor, 0.1);
          const double got = ls::contrastive_anchor_loss(dy, fo, i, dy_anchor ? ls::Anchor::Dynamic : ls::Anchor::FlowOs, 0.1);
          oracle = std::max(oracle, std::abs(got - w));
          want += w;
        }
      }
      const double l = ls::contrastive_loss(dy, fo, 0.1).item();
      oracle = std::max(oracle, std::abs(l - want / static_cast<double>(2 * b)));
      swap = std::max(swap, std::abs(l - ls::contrastive_loss(fo, dy, 0.1).item()));
      if (b == 1) cr.check(l == 0.0, "B=1 loss " + fmt(l) + " is not exactly 0");
    }
  }
  cr.check(oracle <= 1e-6, "oracle deviation " + fmt(oracle));
  cr.check(swap <= 1e-7, "swap asymmetry " + fmt(swap));

  double ident = 0;
  for (std::size_t b : {2u, 4u, 8u}) {
    const auto row = random_tensor({1, 6}, rng);
    std::vector<double> v;
    for (std::size_t i = 0; i < b; ++i) v.insert(v.end(), row.data().begin(), row.data().end());
    const auto t = TD::from_data({b, 6}, v);
    ident = std::max(ident, std::abs(ls::contrastive_loss(t, t, 0.1).item() - std::log(2.0 * static_cast<double>(b) - 1)));
  }
  cr.check(ident <= 1e-6, "identical-feature deviation " + fmt(ident));

  const auto ce = TD::scalar(1.234567), con = TD::scalar(0.7654321);
  cr.check(ls::total_loss(ce, con, 1.0).item() == ce.item(), "alpha=1 is not exactly CE");
  cr.check(ls::total_loss(ce, con, 0.0).item() == con.item(), "alpha=0 is not exactly the contrastive loss");
  cr.note("oracle " + fmt(oracle) + ", swap " + fmt(swap) + ", identical " + fmt(ident));
  return cr.report();
}

// ---------------------------------------------------------------- 7

bool criterion_metrics() {
  namespace ev = msmmt::eval;
  Criterion cr(7, "metrics");
  std::mt19937_64 rng(22);
  bool exact = true;
  for (int trial = 0; trial < 200; ++trial) {
    const int C = 2 + static_cast<int>(rng() % 5);
    const std::size_t n = 1 + rng() % 60;
    std::vector<int> y(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng() % static_cast<unsigned>(C));
      p[i] = rng() % 3 == 0 ? y[i] : static_cast<int>(rng() % static_cast<unsigned>(C));
    }
    std::vector<std::vector<long>> cm(static_cast<std::size_t>(C), std::vector<long>(static_cast<std::size_t>(C), 0));
    for (std::size_t i = 0; i < n; ++i) ++cm[static_cast<std::size_t>(y[i])][static_cast<std::size_t>(p[i])];
    long diag = 0;
    double rec = 0, f1 = 0;
    std::vector<long> tp, fp, fn;
    for (std::size_t c = 0; c < static_cast<std::size_t>(C); ++c) {
      long row = 0, col = 0;
      for (std::size_t k = 0; k < static_cast<std::size_t>(C); ++k) {
        row += cm[c][k];
        col += cm[k][c];
      }
      diag += cm[c][c];
      tp.push_back(cm[c][c]);
      fp.push_back(col - cm[c][c]);
      fn.push_back(row - cm[c][c]);
      if (row) rec += static_cast<double>(cm[c][c]) / static_cast<double>(row);
      const long den = 2 * cm[c][c] + (col - cm[c][c]) + (row - cm[c][c]);
      if (den) f1 += 2.0 * static_cast<double>(cm[c][c]) / static_cast<double>(den);
    }
    const auto m = ev::compute_metrics(y, p, C);
    const double acc = static_cast<double>(diag) / static_cast<double>(n);
    if (m.tp != tp || m.fp != fp || m.fn != fn || m.acc != acc || m.uar != rec / C || m.uf1 != f1 / C) {
      exact = false;
      cr.check(false, "oracle mismatch at case " + std::to_string(trial));
    }
  }
  cr.note(std::string("200 oracle cases ") + (exact ? "agree exactly" : "disagree"));

  const auto hand = ev::compute_metrics({0, 0, 1, 1}, {0, 1, 1, 1}, 2);
  cr.check(std::abs(hand.acc - 0.75) <= 1e-4, "hand acc " + fmt(hand.acc));
  cr.check(std::abs(hand.uar - 0.75) <= 1e-4, "hand uar " + fmt(hand.uar));
  cr.check(std::abs(hand.uf1 - 0.58335) <= 1e-4, "hand uf1 " + fmt(hand.uf1) + " vs expected 0.58335");
  cr.note("hand example acc " + fmt(hand.acc) + " uar " + fmt(hand.uar) + " uf1 " + fmt(hand.uf1));

  const std::vector<int> y{0, 1, 2, 2, 1, 0, 1};
  const auto perfect = ev::compute_metrics(y, y, 3);
  cr.check(perfect.acc == 1.0 && perfect.uar == 1.0 && perfect.uf1 == 1.0, "perfect predictions not all 1.0");

  double bal = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> yy, pp;
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 7; ++i) {
        yy.push_back(c);
        pp.push_back(static_cast<int>(rng() % 3));
      }
    const auto m = ev::compute_metrics(yy, pp, 3);
    bal = std::max(bal, std::abs(m.uar - m.acc));
  }
  cr.check(bal <= 1e-12, "balanced UAR - Acc " + fmt(bal));
  return cr.report();
}

// ---------------------------------------------------------------- 8

double measured_shift(const Image& img, double k) {
  std::complex<double> acc = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) acc += static_cast<double>(img.at(y, x)) * std::polar(1.0, -k * x);
  return -(std::arg(acc) + kPi / 2) / k;
}

bool criterion_evm() {
  namespace pp = msmmt::prep;
  Criterion cr(8, "EVM");
  const int t = 64, h = 32, w = 128;
  const double fps = 32, freq = 2, amp = 0.3, alpha = 10;
  const double k = 2 * kPi / 64;
  pp::VideoClip clip;
  clip.fps = fps;
  for (int i = 0; i < t; ++i) {
    const double s = amp * std::sin(2 * kPi * freq * i / fps);
    Image f(h, w, 1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) f.at(y, x) = static_cast<float>(0.5 + 0.3 * std::sin(k * (x - s)));
    clip.frames.push_back(f);
  }
  clip.offset = t - 1;
  const auto out = pp::evm_magnify(clip, {alpha, 0.4, 8.0, 4});
  double sc = 0, cc = 0;
  for (int i = 0; i < t; ++i) {
    const double s = measured_shift(out.frames[static_cast<std::size_t>(i)], k);
    sc += s * std::sin(2 * kPi * freq * i / fps);
    cc += s * std::cos(2 * kPi * freq * i / fps);
  }
  const double factor = 2.0 / t * std::hypot(sc, cc) / amp;
  cr.check(factor >= 8.25 && factor <= 13.75, "amplification factor " + fmt(factor));

  pp::VideoClip tex;
  tex.fps = 30;
  for (int i = 0; i < 10; ++i) tex.frames.push_back(smooth_noise(32, 24, 50 + static_cast<std::uint64_t>(i)));
  tex.offset = 9;
  const auto same = pp::evm_magnify(tex, {0.0, 0.4, 8.0, 4});
  double dev = 0;
  for (std::size_t i = 0; i < tex.frames.size(); ++i)
    for (std::size_t p = 0; p < tex.frames[i].pixels.size(); ++p)
      dev = std::max(dev, static_cast<double>(std::abs(same.frames[i].pixels[p] - tex.frames[i].pixels[p])));
  cr.check(dev <= 1e-5, "alpha=0 deviation " + fmt(dev));
  cr.note("amplification factor " + fmt(factor) + ", alpha=0 deviation " + fmt(dev));
  return cr.report();
}

// ---------------------------------------------------------------- 9, 10

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json e2e_config() {
  return json::parse(R"({
    "prep": {"evm": {"enabled": false}},
    "model": {"image_size": 64, "patch_size": 16, "scales": [1, 2], "layers": 4, "heads": 4, "embed_dim": 64,
              "mlp_ratio": 4, "dropout_rate": 0.0},
    "loss": {"alpha": 0.1},
    "train": {"epochs": 30, "batch_size": 16}
  })");
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name) {
  const auto p = dir / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

int run(const std::string& cmd, const fs::path& config, const fs::path& out, bool sweep = false) {
  msmmt::app::CommandOptions o;
  o.config = config;
  o.out = out;
  o.alpha_sweep = sweep;
  o.workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return msmmt::app::run_command(cmd, o);
}

bool criterion_end_to_end(const fs::path& work) {
  Criterion cr(9, "end-to-end synthetic LOSO");
  const auto out = work / "out";
  const auto cfg = write_config(work, e2e_config(), "e2e.json");
  cr.check(run("gen-synth", cfg, out) == 0, "gen-synth failed");
  cr.check(run("features", cfg, out) == 0, "features failed");
  cr.check(run("loso", cfg, out) == 0, "loso failed");
  const double first_run = cr.seconds();
  const auto agg_path = out / "reports" / "aggregate.json";
  if (!fs::exists(agg_path)) {
    cr.check(false, "aggregate.json missing");
    return cr.report();
  }
  const std::string first = slurp(agg_path);
  const auto agg = json::parse(first);
  const double train_acc = agg["train_acc"].get<double>();
  const double uf1 = agg["uf1"].get<double>();
  cr.check(train_acc >= 0.95, "train accuracy " + fmt(train_acc));
  cr.check(uf1 >= 0.80, "pooled UF1 " + fmt(uf1));
  cr.check(first_run < 15 * 60, "first run took " + fmt(first_run) + " s");
  cr.note("train acc " + fmt(train_acc) + ", pooled acc " + fmt(agg["acc"].get<double>()) + ", uar " +
          fmt(agg["uar"].get<double>()) + ", uf1 " + fmt(uf1) + ", first run " + fmt(first_run) + " s");

  cr.check(run("loso", cfg, out) == 0, "loso rerun failed");
  cr.check(slurp(agg_path) == first, "rerun aggregate.json differs");
  return cr.report();
}

bool criterion_sweep(const fs::path& work) {
  Criterion cr(10, "alpha sweep smoke test");
  const auto out = work / "out";
  auto j = e2e_config();
  j["train"]["epochs"] = 1;
  j["eval"] = {{"sweep_epochs", 1}};
  const auto cfg = write_config(work, j, "sweep.json");
  if (!fs::exists(out / "manifest.json")) cr.check(run("gen-synth", cfg, out) == 0, "gen-synth failed");
  cr.check(run("loso", cfg, out, true) == 0, "loso --alpha-sweep failed");
  std::ifstream in(out / "reports" / "alpha_sweep.csv");
  std::string line;
  std::getline(in, line);
  cr.check(line == "alpha,acc,uar,uf1", "header '" + line + "'");
  int rows = 0;
  std::vector<double> alphas;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rows;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 4) {
      cr.check(false, "row '" + line + "' has " + std::to_string(v.size()) + " cells");
      continue;
    }
    alphas.push_back(v[0]);
    cr.check(v[2] >= 0 && v[2] <= 1 && v[3] >= 0 && v[3] <= 1, "row '" + line + "' out of range");
  }
  cr.check(rows == 10, std::to_string(rows) + " rows");
  for (std::size_t i = 0; i < alphas.size(); ++i)
    cr.check(std::abs(alphas[i] - 0.1 * static_cast<double>(i)) < 1e-9, "alpha row " + std::to_string(i));
  cr.note(std::to_string(rows) + " rows");
  return cr.report();
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto want = [&](int id) { return only.empty() || only.count(id) > 0; };

  const auto work = fs::temp_directory_path() / "msmmt_acceptance";
  if (want(9) || want(10)) {
    fs::remove_all(work);
    fs::create_directories(work);
  }

  int failed = 0;
  auto run_one = [&](int id, const std::function<bool()>& f) {
    if (!want(id)) return;
    try {
      if (!f()) ++failed;
    } catch (const std::exception& e) {
      std::printf("criterion %d FAIL: exception %s\n", id, e.what());
      ++failed;
    }
  };
  run_one(1, criterion_gradients);
  run_one(2, criterion_rank_pooling);
  run_one(3, criterion_tvl1);
  run_one(4, criterion_strain);
  run_one(5, criterion_fusion);
  run_one(6, criterion_losses);
  run_one(7, criterion_metrics);
  run_one(8, criterion_evm);
  run_one(9, [&] { return criterion_end_to_end(work); });
  run_one(10, [&] { return criterion_sweep(work); });
  std::printf("%d criterion(s) failed\n", failed);
  return failed ? 1 : 0;
}
