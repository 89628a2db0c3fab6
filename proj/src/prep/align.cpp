#include "msmmt/prep/align.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <sstream>

#include "msmmt/diffmath/msmt_io.hpp"

namespace msmmt::prep {

std::vector<LandmarkSet> read_landmarks_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ClipError("missing landmarks file " + path.string());
  std::vector<LandmarkSet> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<double> vals;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (first) {
        first = false;
        continue;
      }
      throw ClipError("non-numeric landmark row in " + path.string());
    }
    first = false;
    if (vals.size() != 2 * kLandmarkCount) {
      throw ClipError("landmark row must have 136 columns, got " + std::to_string(vals.size()) + " in " + path.string());
    }
    LandmarkSet lm;
    for (int i = 0; i < kLandmarkCount; ++i) {
      lm.points[static_cast<std::size_t>(i)] = {vals[static_cast<std::size_t>(2 * i)],
                                                vals[static_cast<std::size_t>(2 * i + 1)]};
    }
    rows.push_back(lm);
  }
  if (rows.empty()) throw ClipError("no landmark rows in " + path.string());
  return rows;
}

void write_landmarks_csv(const std::filesystem::path& path, const std::vector<LandmarkSet>& rows) {
  std::ostringstream os;
  os.precision(9);
  for (const auto& lm : rows) {
    for (int i = 0; i < kLandmarkCount; ++i) {
      const auto& p = lm.points[static_cast<std::size_t>(i)];
      os << (i ? "," : "") << p.x << ',' << p.y;
    }
    os << '\n';
  }
  diffmath::write_file_atomic(path, os.str());
}

void validate_landmarks(const LandmarkSet& lm, int height, int width) {
  const double mx = kLandmarkMargin * width, my = kLandmarkMargin * height;
  for (const auto& p : lm.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || p.x < -mx || p.x > width - 1 + mx || p.y < -my ||
        p.y > height - 1 + my) {
      throw ClipError("landmark outside frame bounds");
    }
  }
}

imaging::Affine similarity_from_pairs(Point p, Point q, Point P, Point Q) {
  using C = std::complex<double>;
  const C zp{p.x, p.y}, zq{q.x, q.y}, wp{P.x, P.y}, wq{Q.x, Q.y};
  const C s = (wq - wp) / (zq - zp);  // rotation + scale
  const C t = wp - s * zp;
  imaging::Affine a;
  a.a = s.real();
  a.b = -s.imag();
  a.c = s.imag();
  a.d = s.real();
  a.tx = t.real();
  a.ty = t.imag();
  return a;
}

AlignResult align_and_crop(const VideoClip& clip, const std::vector<LandmarkSet>& landmarks, int out_h, int out_w,
                           const AlignOptions& o) {
  if (clip.frames.empty()) throw ClipError("align_and_crop: empty clip");
  if (landmarks.empty()) throw ClipError("align_and_crop: missing landmarks");
  if (out_h < 2 || out_w < 2) throw ClipError("align_and_crop: output size must be at least 2 x 2");
  const int h = clip.height(), w = clip.width();
  const auto& lm = landmarks.front();
  validate_landmarks(lm, h, w);
  const Point pa = lm.points[kInnerEyeCornerA];
  const Point pb = lm.points[kInnerEyeCornerB];
  if (std::hypot(pb.x - pa.x, pb.y - pa.y) < o.min_eye_distance) {
    throw ClipError("align_and_crop: degenerate eye distance");
  }
  const Point ca{o.eye_a_x * (w - 1), o.eye_y * (h - 1)};
  const Point cb{o.eye_b_x * (w - 1), o.eye_y * (h - 1)};
  const auto sim = similarity_from_pairs(pa, pb, ca, cb);

  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto& p : lm.points) {
    const auto [x, y] = sim.apply(p.x, p.y);
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  }
  const double pad_x = o.crop_pad * (x1 - x0), pad_y = o.crop_pad * (y1 - y0);
  x0 -= pad_x;
  x1 += pad_x;
  y0 -= pad_y;
  y1 += pad_y;
  // Grow the shorter side so the crop keeps the output aspect ratio.
  const double want = static_cast<double>(out_w - 1) / (out_h - 1);
  if ((x1 - x0) < want * (y1 - y0)) {
    const double grow = 0.5 * (want * (y1 - y0) - (x1 - x0));
    x0 -= grow;
    x1 += grow;
  } else {
    const double grow = 0.5 * ((x1 - x0) / want - (y1 - y0));
    y0 -= grow;
    y1 += grow;
  }

  // output pixel -> aligned coordinates, pixel centers spanning [x0, x1].
  imaging::Affine crop;
  crop.a = (x1 - x0) / (out_w - 1);
  crop.b = 0;
  crop.tx = x0;
  crop.c = 0;
  crop.d = (y1 - y0) / (out_h - 1);
  crop.ty = y0;
  const auto out_to_src = sim.inverse().compose(crop);

  AlignResult r;
  r.similarity = sim;
  r.output_to_source = out_to_src;
  r.clip = clip;
  r.clip.frames.clear();
  for (const auto& f : clip.frames) {
    auto out = imaging::warp_affine(f, out_to_src, out_h, out_w);
    imaging::clamp01(out);
    r.clip.frames.push_back(std::move(out));
  }
  const auto src_to_out = out_to_src.inverse();
  for (std::size_t i = 0; i < lm.points.size(); ++i) {
    const auto [x, y] = src_to_out.apply(lm.points[i].x, lm.points[i].y);
    r.first_frame_landmarks.points[i] = {x, y};
  }
  return r;
}

}  // namespace msmmt::prep
