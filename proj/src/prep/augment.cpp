#include "msmmt/prep/augment.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace msmmt::prep {

AugmentParams sample_augment_params(std::uint64_t seed, const AugmentOptions& o) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> rot(-o.max_rotation_deg, o.max_rotation_deg);
  std::uniform_real_distribution<double> scale(o.scale_lo, o.scale_hi);
  std::bernoulli_distribution flip(o.flip_probability);
  AugmentParams p;
  p.rotation_deg = rot(rng);
  p.flip = flip(rng);
  p.scale = scale(rng);
  return p;
}

VideoClip apply_augment(const VideoClip& clip, const AugmentParams& p) {
  if (clip.frames.empty()) return clip;
  const int h = clip.height(), w = clip.width();
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const double th = p.rotation_deg * std::numbers::pi / 180.0;
  // src -> dst: translate(c) * rotate * scale * flip * translate(-c)
  imaging::Affine fwd;
  const double f = p.flip ? -1.0 : 1.0;
  fwd.a = p.scale * std::cos(th) * f;
  fwd.b = -p.scale * std::sin(th);
  fwd.c = p.scale * std::sin(th) * f;
  fwd.d = p.scale * std::cos(th);
  fwd.tx = cx - (fwd.a * cx + fwd.b * cy);
  fwd.ty = cy - (fwd.c * cx + fwd.d * cy);
  const auto inv = fwd.inverse();
  VideoClip out = clip;
  for (auto& frame : out.frames) {
    frame = imaging::warp_affine(frame, inv, h, w);
    imaging::clamp01(frame);
  }
  return out;
}

VideoClip augment(const VideoClip& clip, std::uint64_t seed, const AugmentOptions& options) {
  return apply_augment(clip, sample_augment_params(seed, options));
}

}  // namespace msmmt::prep
