#include "msmmt/prep/evm.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>

namespace msmmt::prep {

namespace {

// FFTW planning is not thread-safe.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

Image downsample(const Image& img) {
  const Image blurred = imaging::gaussian_blur(img, 1.0);
  const int h = (img.height + 1) / 2, w = (img.width + 1) / 2;
  Image out(h, w, img.channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = blurred.at(2 * y, 2 * x, c);
  return out;
}

// Ideal band-pass over the leading (time) axis of a T x n block, in place.
void temporal_bandpass(std::vector<double>& data, int t, int n, double fps, double f_lo, double f_hi) {
  const int nf = t / 2 + 1;
  std::vector<fftw_complex> spec(static_cast<std::size_t>(nf) * static_cast<std::size_t>(n));
  fftw_plan fwd, inv;
  {
    std::lock_guard lock(fftw_planner_mutex());
    fwd = fftw_plan_many_dft_r2c(1, &t, n, data.data(), nullptr, n, 1, spec.data(), nullptr, n, 1, FFTW_ESTIMATE);
    inv = fftw_plan_many_dft_c2r(1, &t, n, spec.data(), nullptr, n, 1, data.data(), nullptr, n, 1, FFTW_ESTIMATE);
  }
  fftw_execute(fwd);
  for (int k = 0; k < nf; ++k) {
    const double f = k * fps / t;
    const double gain = (f >= f_lo && f <= f_hi) ? 1.0 / t : 0.0;
    for (int i = 0; i < n; ++i) {
      auto& z = spec[static_cast<std::size_t>(k) * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)];
      z[0] *= gain;
      z[1] *= gain;
    }
  }
  fftw_execute(inv);
  std::lock_guard lock(fftw_planner_mutex());
  fftw_destroy_plan(fwd);
  fftw_destroy_plan(inv);
}

}  // namespace

std::vector<Image> laplacian_pyramid(const Image& img, int levels) {
  if (levels < 1) throw ClipError("pyramid levels must be >= 1");
  std::vector<Image> pyr;
  Image cur = img;
  for (int l = 0; l + 1 < levels; ++l) {
    Image down = downsample(cur);
    const Image up = imaging::resize_bilinear(down, cur.height, cur.width);
    for (std::size_t i = 0; i < cur.pixels.size(); ++i) cur.pixels[i] -= up.pixels[i];
    pyr.push_back(std::move(cur));
    cur = std::move(down);
  }
  pyr.push_back(std::move(cur));
  return pyr;
}

Image collapse_pyramid(const std::vector<Image>& pyr) {
  Image cur = pyr.back();
  for (int l = static_cast<int>(pyr.size()) - 2; l >= 0; --l) {
    const auto& band = pyr[static_cast<std::size_t>(l)];
    Image up = imaging::resize_bilinear(cur, band.height, band.width);
    for (std::size_t i = 0; i < up.pixels.size(); ++i) up.pixels[i] += band.pixels[i];
    cur = std::move(up);
  }
  return cur;
}

VideoClip evm_magnify(const VideoClip& clip, const EvmOptions& o) {
  const int t = clip.frame_count();
  if (t < kEvmMinFrames) {
    throw ClipError("clip too short for the temporal filter: T=" + std::to_string(t) + " < " +
                    std::to_string(kEvmMinFrames));
  }
  if (o.levels < 1) throw ClipError("evm levels must be >= 1");
  if (!(clip.fps > 0)) throw ClipError("evm requires a known fps");
  if (!(o.f_hi < clip.fps / 2)) throw ClipError("evm f_hi must be below fps/2");
  if (!(o.f_lo >= 0 && o.f_lo < o.f_hi)) throw ClipError("evm band must satisfy 0 <= f_lo < f_hi");

  std::vector<std::vector<Image>> pyrs;
  pyrs.reserve(static_cast<std::size_t>(t));
  for (const auto& f : clip.frames) pyrs.push_back(laplacian_pyramid(f, o.levels));

  if (o.alpha != 0.0) {
    for (std::size_t l = 0; l < pyrs.front().size(); ++l) {
      const int n = static_cast<int>(pyrs.front()[l].pixels.size());
      std::vector<double> block(static_cast<std::size_t>(t) * static_cast<std::size_t>(n));
      for (int k = 0; k < t; ++k)
        for (int i = 0; i < n; ++i)
          block[static_cast<std::size_t>(k) * n + i] = pyrs[static_cast<std::size_t>(k)][l].pixels[static_cast<std::size_t>(i)];
      temporal_bandpass(block, t, n, clip.fps, o.f_lo, o.f_hi);
      for (int k = 0; k < t; ++k)
        for (int i = 0; i < n; ++i)
          pyrs[static_cast<std::size_t>(k)][l].pixels[static_cast<std::size_t>(i)] +=
              static_cast<float>(o.alpha * block[static_cast<std::size_t>(k) * n + i]);
    }
  }

  VideoClip out = clip;
  for (int k = 0; k < t; ++k) {
    auto frame = collapse_pyramid(pyrs[static_cast<std::size_t>(k)]);
    imaging::clamp01(frame);
    out.frames[static_cast<std::size_t>(k)] = std::move(frame);
  }
  return out;
}

}  // namespace msmmt::prep
