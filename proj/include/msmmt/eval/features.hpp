#pragma once

#include "msmmt/dynimg/dynamic_image.hpp"
#include "msmmt/flow/flow.hpp"

namespace msmmt::eval {

struct FeatureOptions {
  dynimg::DynImgOptions dynimg;
  flow::FlowOsOptions flow;
};

/// The two modality images of one clip.
struct SampleFeatures {
  imaging::Image dynamic;
  imaging::Image flow_os;
};

SampleFeatures extract_features(const prep::VideoClip& clip, const FeatureOptions& options = {});

/// Resized to size x size with 3 channels (a single channel is replicated).
imaging::Image to_model_image(const imaging::Image& img, int size);

}  // namespace msmmt::eval
