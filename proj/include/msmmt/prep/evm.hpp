#pragma once

#include "msmmt/prep/clip.hpp"

namespace msmmt::prep {

struct EvmOptions {
  double alpha = 10.0;
  double f_lo = 0.4;  // Hz
  double f_hi = 8.0;  // Hz
  int levels = 4;     // pyramid levels including the low-pass residual
};

inline constexpr int kEvmMinFrames = 8;

/// Linear Eulerian magnification: Laplacian pyramid per frame, ideal temporal
/// band-pass of every level over [f_lo, f_hi], amplified by alpha and added
/// back, pyramid collapsed and clipped to [0, 1].
VideoClip evm_magnify(const VideoClip& clip, const EvmOptions& options = {});

/// Laplacian pyramid: levels-1 band images followed by the low-pass residual.
std::vector<Image> laplacian_pyramid(const Image& img, int levels);
Image collapse_pyramid(const std::vector<Image>& pyramid);

}  // namespace msmmt::prep
