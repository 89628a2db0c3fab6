#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "msmmt/imaging/image.hpp"

namespace msmmt::prep {

using imaging::Image;

class ClipError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Aligned, cropped frame sequence with its annotation.
struct VideoClip {
  std::vector<Image> frames;  // all H x W x C, values in [0, 1]
  double fps = 30.0;
  std::string subject_id;
  int label = 0;
  int onset = 0;
  int apex = 0;
  int offset = 0;

  int frame_count() const { return static_cast<int>(frames.size()); }
  int height() const { return frames.empty() ? 0 : frames.front().height; }
  int width() const { return frames.empty() ? 0 : frames.front().width; }
  int channels() const { return frames.empty() ? 0 : frames.front().channels; }
};

/// Midpoint of [onset, offset], used when a dataset has no apex annotation.
int midpoint_apex(int onset, int offset);

/// Throws ClipError unless T >= 2, onset <= apex <= offset < T, frames share
/// one shape and every pixel lies in [0, 1].
void validate_clip(const VideoClip& clip);

/// MSMT tensor T x H x W x C plus a JSON sidecar at `<path>.json` holding
/// {subject_id, label, fps, onset, apex, offset}.
void save_clip(const std::filesystem::path& path, const VideoClip& clip);

/// Reads an MSMT clip file or a directory of numbered PNG frames. Metadata
/// comes from the sidecar when present; otherwise defaults are kept with
/// onset = 0, offset = T - 1 and a midpoint apex.
VideoClip load_clip(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& clip_path);

}  // namespace msmmt::prep
