#include "msmmt/eval/features.hpp"

namespace msmmt::eval {

SampleFeatures extract_features(const prep::VideoClip& clip, const FeatureOptions& options) {
  SampleFeatures f;
  f.dynamic = dynimg::dynamic_image(clip, options.dynimg).image;
  f.flow_os = flow::flow_os_image(clip, options.flow);
  return f;
}

imaging::Image to_model_image(const imaging::Image& img, int size) {
  imaging::Image r = (img.height == size && img.width == size) ? img : imaging::resize_bilinear(img, size, size);
  if (r.channels == 3) return r;
  imaging::Image out(size, size, 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = r.at(y, x, r.channels == 1 ? 0 : c % r.channels);
  return out;
}

}  // namespace msmmt::eval
