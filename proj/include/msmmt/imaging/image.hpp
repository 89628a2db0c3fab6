#pragma once

#include <array>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace msmmt::imaging {

/// Row-major H x W x C float image.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f);

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels) +
           static_cast<std::size_t>(c);
  }
  float& at(int y, int x, int c = 0) { return pixels[index(y, x, c)]; }
  float at(int y, int x, int c = 0) const { return pixels[index(y, x, c)]; }
  bool same_shape(const Image& o) const { return height == o.height && width == o.width && channels == o.channels; }
  std::size_t size() const { return pixels.size(); }
};

/// Bilinear sample at continuous pixel coordinates (pixel centers on
/// integers), clamping to the border.
float sample_bilinear(const Image& img, double y, double x, int c);

/// Resize with pixel-center alignment.
Image resize_bilinear(const Image& img, int out_h, int out_w);

/// Luma (0.299, 0.587, 0.114) for 3-channel input; copies 1-channel input.
Image to_gray(const Image& img);

/// Separable Gaussian blur with border replication; sigma <= 0 copies.
Image gaussian_blur(const Image& img, double sigma);

/// One channel of `img` as a 1-channel image.
Image channel(const Image& img, int c);

/// 2x3 affine map (x, y) -> (a*x + b*y + tx, c*x + d*y + ty).
struct Affine {
  double a = 1, b = 0, tx = 0;
  double c = 0, d = 1, ty = 0;

  std::array<double, 2> apply(double x, double y) const { return {a * x + b * y + tx, c * x + d * y + ty}; }
  Affine inverse() const;
  /// this ∘ other (apply `other` first).
  Affine compose(const Affine& other) const;
  static Affine identity() { return {}; }
};

/// out(y, x) = src(dst_to_src(x, y)), bilinear with border clamping.
Image warp_affine(const Image& src, const Affine& dst_to_src, int out_h, int out_w);

void clamp01(Image& img);

double rms_difference(const Image& a, const Image& b);

/// Linear map of `values` onto [0, 1]; a constant input maps to 0.5.
std::vector<float> normalize_minmax(const std::vector<double>& values);

/// 8-bit PNG (gray, RGB or RGBA) to float in [0, 1]; alpha is dropped.
Image load_png(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const Image& img);

}  // namespace msmmt::imaging
