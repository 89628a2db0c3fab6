#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "msmmt/imaging/image.hpp"
#include "msmmt/prep/clip.hpp"

namespace msmmt::prep {

struct Point {
  double x = 0;
  double y = 0;
};

inline constexpr int kLandmarkCount = 68;
// Inner eye corners in the 0-based 68-point layout.
inline constexpr int kInnerEyeCornerA = 39;
inline constexpr int kInnerEyeCornerB = 42;

struct LandmarkSet {
  std::array<Point, kLandmarkCount> points{};
};

/// One row per frame, 136 columns x0,y0,x1,y1,...,x67,y67. A non-numeric
/// first row is treated as a header.
std::vector<LandmarkSet> read_landmarks_csv(const std::filesystem::path& path);
void write_landmarks_csv(const std::filesystem::path& path, const std::vector<LandmarkSet>& rows);

/// Landmarks may sit outside the frame by this fraction of its extent.
inline constexpr double kLandmarkMargin = 0.10;

/// Throws ClipError when a point lies outside the frame plus margin.
void validate_landmarks(const LandmarkSet& lm, int height, int width);

struct AlignOptions {
  // Canonical inner eye corners as fractions of the frame size.
  double eye_a_x = 0.35;
  double eye_b_x = 0.65;
  double eye_y = 0.38;
  // Crop padding around the landmark box, as a fraction of its extent.
  double crop_pad = 0.05;
  double min_eye_distance = 2.0;
};

struct AlignResult {
  VideoClip clip;
  imaging::Affine similarity;       // source -> aligned frame coordinates
  imaging::Affine output_to_source;  // output pixel -> source pixel
  LandmarkSet first_frame_landmarks;  // first-frame landmarks in output pixels
};

/// Similarity transform mapping the first frame's inner eye corners to their
/// canonical positions; the same transform is applied to every frame, the
/// face is cropped by the transformed landmark box (padded, then widened to
/// the output aspect ratio) and resized to out_h x out_w. Metadata of `clip` is carried over.
AlignResult align_and_crop(const VideoClip& clip, const std::vector<LandmarkSet>& landmarks, int out_h, int out_w,
                           const AlignOptions& options = {});

/// Similarity (rotation + uniform scale + translation) sending p -> P, q -> Q.
imaging::Affine similarity_from_pairs(Point p, Point q, Point P, Point Q);

}  // namespace msmmt::prep
