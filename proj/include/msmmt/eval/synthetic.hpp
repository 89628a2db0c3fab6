#pragma once

#include <cstdint>
#include <vector>

#include "msmmt/eval/dataset.hpp"
#include "msmmt/prep/clip.hpp"

namespace msmmt::eval {

/// Textured clips whose class is the direction of a localized motion.
struct SyntheticSpec {
  int subjects = 8;
  int clips_per_class = 6;
  int classes = 3;
  int image_size = 64;
  int frames = 12;
  std::vector<double> directions_deg;  // empty: evenly spaced, class c at 360 c / classes
  double magnitude = 2.0;              // px at the window center
  double window_sigma = 0.22;          // fraction of the image size
  double noise_std = 0.01;
  double fps = 30.0;
  std::uint64_t seed = 0;

  /// Throws EvalError on an invalid spec.
  void validate() const;
  double direction_deg(int c) const;
};

struct SyntheticItem {
  Sample sample;  // clip_path is "clips/<id>.msmt"
  prep::VideoClip clip;
};

/// Per-subject smoothed-noise RGB texture in [0, 1].
imaging::Image subject_texture(const SyntheticSpec& spec, int subject);

std::vector<SyntheticItem> gen_synthetic(const SyntheticSpec& spec);

}  // namespace msmmt::eval
