#include "msmmt/prep/clip.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>

#include "msmmt/diffmath/msmt_io.hpp"

namespace msmmt::prep {

namespace fs = std::filesystem;
using nlohmann::json;

int midpoint_apex(int onset, int offset) { return onset + (offset - onset) / 2; }

void validate_clip(const VideoClip& clip) {
  const int t = clip.frame_count();
  if (t < 2) throw ClipError("clip needs at least 2 frames, got " + std::to_string(t));
  if (!(0 <= clip.onset && clip.onset <= clip.apex && clip.apex <= clip.offset && clip.offset < t)) {
    throw ClipError("clip indices violate onset <= apex <= offset < T (" + std::to_string(clip.onset) + ", " +
                    std::to_string(clip.apex) + ", " + std::to_string(clip.offset) + ", T=" + std::to_string(t) + ")");
  }
  if (!(clip.fps > 0)) throw ClipError("clip fps must be positive");
  for (const auto& f : clip.frames) {
    if (!f.same_shape(clip.frames.front())) throw ClipError("clip frames differ in shape");
    for (float p : f.pixels) {
      if (!(p >= 0.0f && p <= 1.0f)) throw ClipError("clip pixel outside [0, 1]");
    }
  }
}

fs::path sidecar_path(const fs::path& clip_path) {
  auto p = clip_path;
  p += ".json";
  return p;
}

void save_clip(const fs::path& path, const VideoClip& clip) {
  validate_clip(clip);
  const auto t = static_cast<std::size_t>(clip.frame_count());
  const auto& f0 = clip.frames.front();
  std::vector<float> values;
  values.reserve(t * f0.size());
  for (const auto& f : clip.frames) values.insert(values.end(), f.pixels.begin(), f.pixels.end());
  diffmath::write_msmt(path,
                       {t, static_cast<std::size_t>(f0.height), static_cast<std::size_t>(f0.width),
                        static_cast<std::size_t>(f0.channels)},
                       values);
  json meta = {{"subject_id", clip.subject_id}, {"label", clip.label}, {"fps", clip.fps},
               {"onset", clip.onset},           {"apex", clip.apex},   {"offset", clip.offset}};
  diffmath::write_file_atomic(sidecar_path(path), meta.dump(2) + "\n");
}

namespace {

std::vector<Image> load_png_frames(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
  }
  // Numbered frames: order by the numeric part, then by name.
  auto number = [](const fs::path& p) {
    const auto stem = p.stem().string();
    std::string digits;
    for (char c : stem)
      if (std::isdigit(static_cast<unsigned char>(c))) digits += c;
    return digits.empty() ? -1LL : std::stoll(digits);
  };
  std::sort(files.begin(), files.end(), [&](const fs::path& a, const fs::path& b) {
    const auto na = number(a), nb = number(b);
    return na != nb ? na < nb : a.filename() < b.filename();
  });
  std::vector<Image> frames;
  for (const auto& f : files) frames.push_back(imaging::load_png(f));
  if (frames.empty()) throw ClipError("no PNG frames in " + dir.string());
  return frames;
}

std::vector<Image> load_msmt_frames(const fs::path& file) {
  auto raw = diffmath::read_msmt(file);
  if (raw.shape.size() != 4) throw ClipError("clip tensor must be T x H x W x C: " + file.string());
  const int t = static_cast<int>(raw.shape[0]);
  const int h = static_cast<int>(raw.shape[1]);
  const int w = static_cast<int>(raw.shape[2]);
  const int c = static_cast<int>(raw.shape[3]);
  std::vector<Image> frames;
  const std::size_t per = static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c);
  for (int i = 0; i < t; ++i) {
    Image img(h, w, c);
    std::copy_n(raw.values.begin() + static_cast<std::ptrdiff_t>(per * static_cast<std::size_t>(i)), per,
                img.pixels.begin());
    frames.push_back(std::move(img));
  }
  return frames;
}

}  // namespace

VideoClip load_clip(const fs::path& path) {
  VideoClip clip;
  if (fs::is_directory(path)) {
    clip.frames = load_png_frames(path);
  } else if (fs::exists(path)) {
    clip.frames = load_msmt_frames(path);
  } else {
    throw ClipError("clip not found: " + path.string());
  }
  clip.onset = 0;
  clip.offset = clip.frame_count() - 1;
  clip.apex = midpoint_apex(clip.onset, clip.offset);
  const auto meta_path = sidecar_path(path);
  if (fs::exists(meta_path)) {
    std::ifstream in(meta_path);
    const json meta = json::parse(in);
    clip.subject_id = meta.value("subject_id", std::string{});
    clip.label = meta.value("label", 0);
    clip.fps = meta.value("fps", clip.fps);
    clip.onset = meta.value("onset", clip.onset);
    clip.offset = meta.value("offset", clip.offset);
    if (meta.contains("apex") && !meta["apex"].is_null()) {
      clip.apex = meta["apex"].get<int>();
    } else {
      clip.apex = midpoint_apex(clip.onset, clip.offset);
    }
  }
  return clip;
}

}  // namespace msmmt::prep
