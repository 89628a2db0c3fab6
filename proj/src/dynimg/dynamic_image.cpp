#include "msmmt/dynimg/dynamic_image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace msmmt::dynimg {

namespace {

void check_problem(const RankPoolProblem& p) {
  if (p.features.size() < 2) throw DynImgError("rank pooling needs T >= 2 frames");
  const auto n = p.features.front().size();
  for (const auto& f : p.features) {
    if (f.size() != n) throw DynImgError("feature vectors differ in length");
    for (double v : f)
      if (!std::isfinite(v)) throw DynImgError("non-finite feature value");
  }
  if (!(p.lambda_reg > 0)) throw DynImgError("lambda_reg must be positive");
}

std::vector<Vector> running_means(const std::vector<Vector>& features) {
  std::vector<Vector> phis;
  Vector acc(features.front().size(), 0.0);
  for (std::size_t t = 0; t < features.size(); ++t) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += features[t][i];
    Vector phi(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i) phi[i] = acc[i] / static_cast<double>(t + 1);
    phis.push_back(std::move(phi));
  }
  return phis;
}

double dot(const Vector& a, const Vector& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Objective plus per-frame subgradient coefficients of the hinge sum.
double evaluate(const std::vector<Vector>& phis, double lambda, const Vector& d, std::vector<double>* coef) {
  const std::size_t t_count = phis.size();
  const double w = 2.0 / (static_cast<double>(t_count) * static_cast<double>(t_count - 1));
  std::vector<double> psi(t_count);
  for (std::size_t t = 0; t < t_count; ++t) psi[t] = dot(d, phis[t]);
  if (coef) coef->assign(t_count, 0.0);
  double hinge = 0;
  for (std::size_t t = 0; t < t_count; ++t)
    for (std::size_t l = t + 1; l < t_count; ++l) {
      const double m = 1 - psi[l] + psi[t];
      if (m > 0) {
        hinge += m;
        if (coef) {
          (*coef)[l] -= w;
          (*coef)[t] += w;
        }
      }
    }
  return 0.5 * lambda * dot(d, d) + w * hinge;
}

}  // namespace

Vector temporal_mean(const std::vector<Vector>& features, int t) {
  if (t < 1 || t > static_cast<int>(features.size())) {
    throw DynImgError("temporal_mean: t=" + std::to_string(t) + " out of range 1.." + std::to_string(features.size()));
  }
  Vector phi(features.front().size(), 0.0);
  for (int k = 0; k < t; ++k) {
    const auto& f = features[static_cast<std::size_t>(k)];
    if (f.size() != phi.size()) throw DynImgError("feature vectors differ in length");
    for (std::size_t i = 0; i < phi.size(); ++i) phi[i] += f[i];
  }
  for (auto& v : phi) v /= t;
  return phi;
}

double rank_score(const Vector& d, const Vector& phi) {
  if (d.size() != phi.size()) throw DynImgError("rank_score: dimension mismatch");
  return dot(d, phi);
}

double rank_pool_objective(const RankPoolProblem& problem, const Vector& d) {
  check_problem(problem);
  if (d.size() != problem.features.front().size()) throw DynImgError("rank_pool_objective: dimension mismatch");
  return evaluate(running_means(problem.features), problem.lambda_reg, d, nullptr);
}

RankPoolResult rank_pool(const RankPoolProblem& problem, const RankPoolOptions& options) {
  check_problem(problem);
  if (options.iters < 0 || !(options.step > 0)) throw DynImgError("rank_pool: invalid solver options");
  const auto phis = running_means(problem.features);
  const double lambda = problem.lambda_reg;
  const std::size_t n = phis.front().size();

  Vector d(n, 0.0);
  std::vector<double> coef;
  RankPoolResult r;
  r.d = d;
  r.objective = evaluate(phis, lambda, d, &coef);
  r.initial_objective = r.objective;
  r.history.reserve(static_cast<std::size_t>(options.iters));
  Vector grad(n);
  for (int it = 0; it < options.iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) grad[i] = lambda * d[i];
    for (std::size_t t = 0; t < phis.size(); ++t) {
      if (coef[t] == 0) continue;
      for (std::size_t i = 0; i < n; ++i) grad[i] += coef[t] * phis[t][i];
    }
    for (std::size_t i = 0; i < n; ++i) d[i] -= options.step * grad[i];
    const double e = evaluate(phis, lambda, d, &coef);
    if (e < r.objective) {
      r.objective = e;
      r.d = d;
    }
    r.history.push_back(r.objective);
  }
  return r;
}

DynamicImage render_dynamic_image(const Vector& d, int height, int width, int channels) {
  if (height <= 0 || width <= 0 || channels <= 0 ||
      d.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width) * static_cast<std::size_t>(channels)) {
    throw DynImgError("render_dynamic_image: descriptor length does not match H*W*C");
  }
  DynamicImage out{imaging::Image(height, width, channels), d};
  out.image.pixels = imaging::normalize_minmax(d);
  return out;
}

RankPoolProblem problem_from_clip(const prep::VideoClip& clip, double lambda_reg, bool sqrt_features) {
  RankPoolProblem p;
  p.lambda_reg = lambda_reg;
  for (int t = clip.onset; t <= clip.offset; ++t) {
    const auto& px = clip.frames.at(static_cast<std::size_t>(t)).pixels;
    Vector f(px.begin(), px.end());
    if (sqrt_features)
      for (auto& v : f) v = std::sqrt(std::max(v, 0.0));
    p.features.push_back(std::move(f));
  }
  return p;
}

DynamicImage dynamic_image(const prep::VideoClip& clip, const DynImgOptions& options) {
  const auto problem = problem_from_clip(clip, options.lambda_reg, options.sqrt_features);
  const auto r = rank_pool(problem, options.solver);
  return render_dynamic_image(r.d, clip.height(), clip.width(), clip.channels());
}

}  // namespace msmmt::dynimg
