#include <algorithm>
#include <array>
#include <cmath>

#include "msmmt/flow/flow.hpp"

namespace msmmt::flow {

namespace {

using imaging::Image;

Field to_field(const Image& img) {
  Field f(img.height, img.width);
  for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = img.pixels[i];
  return f;
}

Image to_image(const Field& f) {
  Image img(f.height, f.width, 1);
  for (std::size_t i = 0; i < f.data.size(); ++i) img.pixels[i] = static_cast<float>(f.data[i]);
  return img;
}

double sample(const Field& f, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(f.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(f.width - 1));
  const int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
  const int y1 = std::min(y0 + 1, f.height - 1), x1 = std::min(x0 + 1, f.width - 1);
  const double fy = y - y0, fx = x - x0;
  return (1 - fy) * ((1 - fx) * f.at(y0, x0) + fx * f.at(y0, x1)) + fy * ((1 - fx) * f.at(y1, x0) + fx * f.at(y1, x1));
}

Field warp(const Field& src, const Field& u, const Field& v) {
  Field out(src.height, src.width);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) out.at(y, x) = sample(src, y + v.at(y, x), x + u.at(y, x));
  return out;
}

// Centered differences, one-sided at the borders.
void centered_gradient(const Field& f, Field& fx, Field& fy) {
  fx = Field(f.height, f.width);
  fy = Field(f.height, f.width);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      const int xl = std::max(x - 1, 0), xr = std::min(x + 1, f.width - 1);
      const int yu = std::max(y - 1, 0), yd = std::min(y + 1, f.height - 1);
      fx.at(y, x) = xr > xl ? (f.at(y, xr) - f.at(y, xl)) / (xr - xl) : 0.0;
      fy.at(y, x) = yd > yu ? (f.at(yd, x) - f.at(yu, x)) / (yd - yu) : 0.0;
    }
}

void forward_gradient(const Field& f, Field& fx, Field& fy) {
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      fx.at(y, x) = x + 1 < f.width ? f.at(y, x + 1) - f.at(y, x) : 0.0;
      fy.at(y, x) = y + 1 < f.height ? f.at(y + 1, x) - f.at(y, x) : 0.0;
    }
}

// Adjoint of -forward_gradient.
void divergence(const Field& px, const Field& py, Field& div) {
  for (int y = 0; y < px.height; ++y)
    for (int x = 0; x < px.width; ++x) {
      double d = 0;
      if (x == 0) d += px.at(y, x);
      else if (x + 1 == px.width) d -= px.at(y, x - 1);
      else d += px.at(y, x) - px.at(y, x - 1);
      if (y == 0) d += py.at(y, x);
      else if (y + 1 == px.height) d -= py.at(y - 1, x);
      else d += py.at(y, x) - py.at(y - 1, x);
      div.at(y, x) = d;
    }
}

Field median3(const Field& f) {
  Field out(f.height, f.width);
  std::array<double, 9> win{};
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = std::clamp(y + dy, 0, f.height - 1), xx = std::clamp(x + dx, 0, f.width - 1);
          win[static_cast<std::size_t>(n++)] = f.at(yy, xx);
        }
      std::nth_element(win.begin(), win.begin() + 4, win.end());
      out.at(y, x) = win[4];
    }
  return out;
}

Field zoom_out(const Field& f, double factor) {
  const double sigma = 0.6 * std::sqrt(1.0 / (factor * factor) - 1.0);
  const Field s = to_field(imaging::gaussian_blur(to_image(f), sigma));
  const int h = static_cast<int>(f.height * factor + 0.5), w = static_cast<int>(f.width * factor + 0.5);
  Field out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(y, x) = sample(s, y / factor, x / factor);
  return out;
}

Field zoom_in(const Field& coarse, int h, int w) {
  const double fy = static_cast<double>(coarse.height) / h, fx = static_cast<double>(coarse.width) / w;
  Field out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.at(y, x) = sample(coarse, y * fy, x * fx);
  return out;
}

void tvl1_level(const Field& i0, const Field& i1, Field& u1, Field& u2, const TvL1Params& prm) {
  const int h = i0.height, w = i0.width;
  Field i1x, i1y;
  centered_gradient(i1, i1x, i1y);
  Field p11(h, w), p12(h, w), p21(h, w), p22(h, w);
  Field div1(h, w), div2(h, w), u1x(h, w), u1y(h, w), u2x(h, w), u2y(h, w);
  const double lt = prm.lambda * prm.theta;
  const double taut = prm.tau / prm.theta;
  const std::size_t n = i0.data.size();
  std::vector<double> v1(n), v2(n);
  for (int warp_i = 0; warp_i < prm.warps; ++warp_i) {
    const Field i1w = warp(i1, u1, u2);
    const Field i1wx = warp(i1x, u1, u2);
    const Field i1wy = warp(i1y, u1, u2);
    std::vector<double> grad(n), rho_c(n);
    for (std::size_t k = 0; k < n; ++k) {
      grad[k] = i1wx.data[k] * i1wx.data[k] + i1wy.data[k] * i1wy.data[k];
      rho_c[k] = i1w.data[k] - i1wx.data[k] * u1.data[k] - i1wy.data[k] * u2.data[k] - i0.data[k];
    }
    for (int it = 0; it < prm.iterations; ++it) {
      // Thresholding step on the data term.
      for (std::size_t k = 0; k < n; ++k) {
        const double rho = rho_c[k] + i1wx.data[k] * u1.data[k] + i1wy.data[k] * u2.data[k];
        double d1 = 0, d2 = 0;
        if (rho < -lt * grad[k]) {
          d1 = lt * i1wx.data[k];
          d2 = lt * i1wy.data[k];
        } else if (rho > lt * grad[k]) {
          d1 = -lt * i1wx.data[k];
          d2 = -lt * i1wy.data[k];
        } else if (grad[k] > 1e-10) {
          d1 = -rho * i1wx.data[k] / grad[k];
          d2 = -rho * i1wy.data[k] / grad[k];
        }
        v1[k] = u1.data[k] + d1;
        v2[k] = u2.data[k] + d2;
      }
      divergence(p11, p12, div1);
      divergence(p21, p22, div2);
      for (std::size_t k = 0; k < n; ++k) {
        u1.data[k] = v1[k] + prm.theta * div1.data[k];
        u2.data[k] = v2[k] + prm.theta * div2.data[k];
      }
      // Dual ascent with Chambolle's projection.
      forward_gradient(u1, u1x, u1y);
      forward_gradient(u2, u2x, u2y);
      for (std::size_t k = 0; k < n; ++k) {
        const double ng1 = 1 + taut * std::hypot(u1x.data[k], u1y.data[k]);
        const double ng2 = 1 + taut * std::hypot(u2x.data[k], u2y.data[k]);
        p11.data[k] = (p11.data[k] + taut * u1x.data[k]) / ng1;
        p12.data[k] = (p12.data[k] + taut * u1y.data[k]) / ng1;
        p21.data[k] = (p21.data[k] + taut * u2x.data[k]) / ng2;
        p22.data[k] = (p22.data[k] + taut * u2y.data[k]) / ng2;
      }
    }
    if (prm.median_filter) {
      u1 = median3(u1);
      u2 = median3(u2);
    }
  }
}

void check_flow(const FlowField& f) {
  if (!f.u.same_shape(f.v) || f.u.data.empty()) throw FlowError("flow components differ in shape");
}

}  // namespace

FlowField tvl1_flow(const Image& im0, const Image& im1, const TvL1Params& prm) {
  if (!im0.same_shape(im1)) throw FlowError("tvl1_flow: image shape mismatch");
  if (im0.channels != 1) throw FlowError("tvl1_flow: expects grayscale images");
  if (std::min(im0.height, im0.width) < kMinPyramidSize) {
    throw FlowError("tvl1_flow: pyramid would shrink below " + std::to_string(kMinPyramidSize) + " px");
  }
  if (prm.levels < 1 || prm.warps < 1 || prm.iterations < 1 || !(prm.zoom_factor > 0 && prm.zoom_factor < 1) ||
      !(prm.tau > 0 && prm.tau <= 0.25) || !(prm.theta > 0) || !(prm.lambda > 0)) {
    throw FlowError("tvl1_flow: invalid parameters");
  }
  int levels = 1;
  for (double s = std::min(im0.height, im0.width) * prm.zoom_factor; levels < prm.levels && s >= kMinPyramidSize;
       s *= prm.zoom_factor) {
    ++levels;
  }

  // Joint normalization to [0, 255], then presmoothing.
  const auto [lo0, hi0] = std::minmax_element(im0.pixels.begin(), im0.pixels.end());
  const auto [lo1, hi1] = std::minmax_element(im1.pixels.begin(), im1.pixels.end());
  const double lo = std::min(*lo0, *lo1), hi = std::max(*hi0, *hi1);
  auto normalize = [&](const Image& im) {
    Image out = im;
    for (auto& p : out.pixels) p = hi > lo ? static_cast<float>(255.0 * (p - lo) / (hi - lo)) : 0.0f;
    return to_field(imaging::gaussian_blur(out, prm.presmooth_sigma));
  };
  std::vector<Field> pyr0{normalize(im0)}, pyr1{normalize(im1)};
  for (int l = 1; l < levels; ++l) {
    pyr0.push_back(zoom_out(pyr0.back(), prm.zoom_factor));
    pyr1.push_back(zoom_out(pyr1.back(), prm.zoom_factor));
  }

  Field u1(pyr0.back().height, pyr0.back().width), u2(pyr0.back().height, pyr0.back().width);
  for (int l = levels - 1; l >= 0; --l) {
    const auto& i0 = pyr0[static_cast<std::size_t>(l)];
    const auto& i1 = pyr1[static_cast<std::size_t>(l)];
    if (!u1.same_shape(i0)) {
      const double sx = static_cast<double>(i0.width) / u1.width, sy = static_cast<double>(i0.height) / u1.height;
      u1 = zoom_in(u1, i0.height, i0.width);
      u2 = zoom_in(u2, i0.height, i0.width);
      for (auto& x : u1.data) x *= sx;
      for (auto& x : u2.data) x *= sy;
    }
    tvl1_level(i0, i1, u1, u2, prm);
  }
  for (std::size_t k = 0; k < u1.data.size(); ++k) {
    if (!std::isfinite(u1.data[k]) || !std::isfinite(u2.data[k])) throw FlowError("tvl1_flow: non-finite flow");
  }
  return {std::move(u1), std::move(u2)};
}

double mean_warp_residual(const Image& im0, const Image& im1, const FlowField& flow) {
  if (!im0.same_shape(im1) || im0.channels != 1 || flow.u.height != im0.height || flow.u.width != im0.width) {
    throw FlowError("mean_warp_residual: shape mismatch");
  }
  const Field i0 = to_field(im0);
  const Field w = warp(to_field(im1), flow.u, flow.v);
  double s = 0;
  for (std::size_t k = 0; k < i0.data.size(); ++k) s += std::abs(w.data[k] - i0.data[k]);
  return s / static_cast<double>(i0.data.size());
}

StrainMap strain(const FlowField& flow) {
  check_flow(flow);
  Field ux, uy, vx, vy;
  centered_gradient(flow.u, ux, uy);
  centered_gradient(flow.v, vx, vy);
  const int h = flow.u.height, w = flow.u.width;
  StrainMap s{Field(h, w), Field(h, w), Field(h, w), Field(h, w), Field(h, w)};
  for (std::size_t k = 0; k < ux.data.size(); ++k) {
    const double xx = ux.data[k], yy = vy.data[k], xy = 0.5 * (uy.data[k] + vx.data[k]);
    s.eps_xx.data[k] = xx;
    s.eps_yy.data[k] = yy;
    s.eps_xy.data[k] = xy;
    s.eps_yx.data[k] = xy;
    s.eps.data[k] = std::sqrt(xx * xx + yy * yy + 2 * xy * xy);
  }
  return s;
}

Image compose_flow_os(const FlowField& flow, const StrainMap& s) {
  check_flow(flow);
  if (!flow.u.same_shape(s.eps)) throw FlowError("compose_flow_os: shape mismatch");
  const int h = flow.u.height, w = flow.u.width;
  Image out(h, w, 3);
  const Field* chans[3] = {&flow.u, &flow.v, &s.eps};
  for (int c = 0; c < 3; ++c) {
    const auto norm = imaging::normalize_minmax(chans[c]->data);
    for (std::size_t k = 0; k < norm.size(); ++k) out.pixels[k * 3 + static_cast<std::size_t>(c)] = norm[k];
  }
  return out;
}

Image flow_os_image(const prep::VideoClip& clip, const FlowOsOptions& options) {
  const int target = options.to_offset ? clip.offset : clip.apex;
  const auto i0 = imaging::to_gray(clip.frames.at(static_cast<std::size_t>(clip.onset)));
  const auto i1 = imaging::to_gray(clip.frames.at(static_cast<std::size_t>(target)));
  const auto f = tvl1_flow(i0, i1, options.tvl1);
  return compose_flow_os(f, strain(f));
}

}  // namespace msmmt::flow
