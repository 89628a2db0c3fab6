#pragma once

#include <stdexcept>
#include <vector>

#include "msmmt/imaging/image.hpp"
#include "msmmt/prep/clip.hpp"

namespace msmmt::flow {

class FlowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major H x W scalar field.
struct Field {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Field() = default;
  Field(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}
  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool same_shape(const Field& o) const { return height == o.height && width == o.width; }
};

struct FlowField {
  Field u;  // horizontal displacement, px
  Field v;  // vertical displacement, px
};

struct StrainMap {
  Field eps;
  Field eps_xx, eps_yy, eps_xy, eps_yx;
};

struct TvL1Params {
  double lambda = 0.15;
  double theta = 0.3;
  double tau = 0.25;
  int warps = 5;
  int iterations = 30;
  int levels = 5;  // upper bound; reduced so the coarsest level keeps >= 8 px
  double zoom_factor = 0.5;
  double presmooth_sigma = 0.8;
  bool median_filter = true;
};

inline constexpr int kMinPyramidSize = 8;

/// Duality-based TV-L1 flow from I0 to I1 (grayscale, values in [0, 1]):
/// I1(x + w(x)) ~ I0(x).
FlowField tvl1_flow(const imaging::Image& i0, const imaging::Image& i1, const TvL1Params& params = {});

/// Mean |I1(x + w(x)) - I0(x)| with bilinear sampling.
double mean_warp_residual(const imaging::Image& i0, const imaging::Image& i1, const FlowField& flow);

/// Central differences, one-sided at the borders.
StrainMap strain(const FlowField& flow);

/// 3 channels (u, v, eps), each min-max normalized; constant channels map to 0.5.
imaging::Image compose_flow_os(const FlowField& flow, const StrainMap& strainmap);

struct FlowOsOptions {
  TvL1Params tvl1;
  bool to_offset = false;  // onset -> offset instead of onset -> apex
};

imaging::Image flow_os_image(const prep::VideoClip& clip, const FlowOsOptions& options = {});

}  // namespace msmmt::flow
