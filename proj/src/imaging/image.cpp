#include "msmmt/imaging/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace msmmt::imaging {

Image::Image(int h, int w, int c, float fill) : height(h), width(w), channels(c) {
  if (h <= 0 || w <= 0 || c <= 0) throw std::invalid_argument("image dimensions must be positive");
  pixels.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c), fill);
}

float sample_bilinear(const Image& img, double y, double x, int c) {
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  const double top = (1 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c);
  const double bot = (1 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c);
  return static_cast<float>((1 - fy) * top + fy * bot);
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  if (out_h == img.height && out_w == img.width) return img;
  Image out(out_h, out_w, img.channels);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double src_y = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < out_w; ++x) {
      const double src_x = (x + 0.5) * sx - 0.5;
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = sample_bilinear(img, src_y, src_x, c);
    }
  }
  return out;
}

Image to_gray(const Image& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3) throw std::invalid_argument("to_gray expects 1 or 3 channels");
  Image out(img.height, img.width, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.at(y, x) = 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
  return out;
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= total;

  Image tmp(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double s = 0;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = std::clamp(x + i, 0, img.width - 1);
          s += kernel[static_cast<std::size_t>(i + radius)] * img.at(y, xx, c);
        }
        tmp.at(y, x, c) = static_cast<float>(s);
      }
  Image out(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double s = 0;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::clamp(y + i, 0, img.height - 1);
          s += kernel[static_cast<std::size_t>(i + radius)] * tmp.at(yy, x, c);
        }
        out.at(y, x, c) = static_cast<float>(s);
      }
  return out;
}

Image channel(const Image& img, int c) {
  Image out(img.height, img.width, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) out.at(y, x) = img.at(y, x, c);
  return out;
}

Affine Affine::inverse() const {
  const double det = a * d - b * c;
  if (std::abs(det) < 1e-12) throw std::invalid_argument("affine map is singular");
  Affine inv;
  inv.a = d / det;
  inv.b = -b / det;
  inv.c = -c / det;
  inv.d = a / det;
  inv.tx = -(inv.a * tx + inv.b * ty);
  inv.ty = -(inv.c * tx + inv.d * ty);
  return inv;
}

Affine Affine::compose(const Affine& o) const {
  Affine r;
  r.a = a * o.a + b * o.c;
  r.b = a * o.b + b * o.d;
  r.c = c * o.a + d * o.c;
  r.d = c * o.b + d * o.d;
  r.tx = a * o.tx + b * o.ty + tx;
  r.ty = c * o.tx + d * o.ty + ty;
  return r;
}

Image warp_affine(const Image& src, const Affine& dst_to_src, int out_h, int out_w) {
  Image out(out_h, out_w, src.channels);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const auto [sx, sy] = dst_to_src.apply(x, y);
      for (int c = 0; c < src.channels; ++c) out.at(y, x, c) = sample_bilinear(src, sy, sx, c);
    }
  return out;
}

void clamp01(Image& img) {
  for (auto& p : img.pixels) p = std::clamp(p, 0.0f, 1.0f);
}

double rms_difference(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("rms_difference: shape mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

std::vector<float> normalize_minmax(const std::vector<double>& values) {
  std::vector<float> out(values.size(), 0.5f);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (!(range > 0)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<float>((values[i] - *lo) / range);
  return out;
}

Image load_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + png.message);
  }
  const bool gray = (png.format & PNG_FORMAT_FLAG_COLOR) == 0;
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&png);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + png.message);
  }
  Image out(static_cast<int>(png.height), static_cast<int>(png.width), gray ? 1 : 3);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = buffer[i] / 255.0f;
  return out;
}

void save_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("save_png expects 1 or 3 channels");
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(img.pixels.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    buffer[i] = static_cast<png_byte>(std::lround(std::clamp(img.pixels[i], 0.0f, 1.0f) * 255.0f));
  }
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + png.message);
  }
}

}  // namespace msmmt::imaging
