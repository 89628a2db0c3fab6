#pragma once

#include <stdexcept>
#include <vector>

#include "msmmt/imaging/image.hpp"
#include "msmmt/prep/clip.hpp"

namespace msmmt::dynimg {

class DynImgError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vector = std::vector<double>;

struct RankPoolProblem {
  std::vector<Vector> features;  // sigma(F_t), one per frame
  double lambda_reg = 1.0;
};

struct RankPoolOptions {
  int iters = 500;
  double step = 1e-3;
};

struct RankPoolResult {
  Vector d;
  double objective = 0;
  double initial_objective = 0;  // E(0)
  std::vector<double> history;   // best objective after each iteration
};

struct DynamicImage {
  imaging::Image image;  // H x W x C in [0, 1]
  Vector descriptor;     // raw d*
};

/// Running mean of the first t feature vectors (t is 1-based).
Vector temporal_mean(const std::vector<Vector>& features, int t);

double rank_score(const Vector& d, const Vector& phi);

/// E(d) = (lambda/2)|d|^2 + 2/(T(T-1)) sum_{l>t} max(0, 1 - psi_l + psi_t).
double rank_pool_objective(const RankPoolProblem& problem, const Vector& d);

/// Full-batch subgradient descent from d = 0, returning the best iterate.
RankPoolResult rank_pool(const RankPoolProblem& problem, const RankPoolOptions& options = {});

DynamicImage render_dynamic_image(const Vector& d, int height, int width, int channels);

/// Flattened frames onset..offset of `clip`, optionally square-rooted.
RankPoolProblem problem_from_clip(const prep::VideoClip& clip, double lambda_reg = 1.0, bool sqrt_features = false);

struct DynImgOptions {
  double lambda_reg = 1.0;
  bool sqrt_features = false;
  RankPoolOptions solver;
};

DynamicImage dynamic_image(const prep::VideoClip& clip, const DynImgOptions& options = {});

}  // namespace msmmt::dynimg
