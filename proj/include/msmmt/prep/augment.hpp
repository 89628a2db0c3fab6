#pragma once

#include <cstdint>

#include "msmmt/prep/clip.hpp"

namespace msmmt::prep {

struct AugmentOptions {
  double max_rotation_deg = 10.0;
  double flip_probability = 0.5;
  double scale_lo = 0.9;
  double scale_hi = 1.1;
};

struct AugmentParams {
  double rotation_deg = 0.0;
  bool flip = false;
  double scale = 1.0;
};

AugmentParams sample_augment_params(std::uint64_t seed, const AugmentOptions& options = {});

/// Applies one rotation/flip/scale about the frame center to every frame.
VideoClip apply_augment(const VideoClip& clip, const AugmentParams& params);

VideoClip augment(const VideoClip& clip, std::uint64_t seed, const AugmentOptions& options = {});

}  // namespace msmmt::prep
