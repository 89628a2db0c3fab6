#include "msmmt/eval/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace msmmt::eval {

namespace {

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(c)};
  return std::mt19937_64(seq);
}

}  // namespace

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& what) { throw EvalError("invalid synthetic spec: " + what); };
  if (subjects < 2) fail("subjects must be >= 2");
  if (clips_per_class < 1) fail("clips_per_class must be >= 1");
  if (classes < 2) fail("classes must be >= 2");
  if (image_size < 16) fail("image_size must be >= 16");
  if (frames < 2) fail("frames must be >= 2");
  if (!directions_deg.empty() && static_cast<int>(directions_deg.size()) != classes) {
    fail("directions_deg needs one entry per class");
  }
  if (!(magnitude > 0)) fail("magnitude must be > 0");
  if (!(window_sigma > 0)) fail("window_sigma must be > 0");
  if (!(noise_std >= 0)) fail("noise_std must be >= 0");
  if (!(fps > 0)) fail("fps must be > 0");
}

double SyntheticSpec::direction_deg(int c) const {
  if (!directions_deg.empty()) return directions_deg.at(static_cast<std::size_t>(c));
  return 360.0 * c / classes;
}

imaging::Image subject_texture(const SyntheticSpec& spec, int subject) {
  auto rng = seeded(spec.seed, 0x7e27u, static_cast<std::uint64_t>(subject));
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  const int n = spec.image_size;
  imaging::Image noise(n, n, 3);
  for (auto& v : noise.pixels) v = u(rng);
  imaging::Image tex = imaging::gaussian_blur(noise, 1.5);
  for (int c = 0; c < 3; ++c) {
    float lo = 1e9f, hi = -1e9f;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        lo = std::min(lo, tex.at(y, x, c));
        hi = std::max(hi, tex.at(y, x, c));
      }
    const float span = std::max(hi - lo, 1e-6f);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) tex.at(y, x, c) = 0.1f + 0.8f * (tex.at(y, x, c) - lo) / span;
  }
  return tex;
}

std::vector<SyntheticItem> gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const int n = spec.image_size;
  const int T = spec.frames;
  const int apex = T / 2;
  std::vector<SyntheticItem> out;
  for (int s = 0; s < spec.subjects; ++s) {
    const imaging::Image tex = subject_texture(spec, s);
    char subject[32];
    std::snprintf(subject, sizeof subject, "s%02d", s + 1);
    for (int c = 0; c < spec.classes; ++c) {
      const double theta = spec.direction_deg(c) * std::numbers::pi / 180.0;
      const double dx = std::cos(theta), dy = std::sin(theta);
      for (int k = 0; k < spec.clips_per_class; ++k) {
        auto rng = seeded(spec.seed, static_cast<std::uint64_t>(s) + 1, static_cast<std::uint64_t>(c),
                          static_cast<std::uint64_t>(k));
        std::uniform_real_distribution<double> jitter(-n / 8.0, n / 8.0);
        std::normal_distribution<float> noise(0.0f, static_cast<float>(spec.noise_std));
        const double cy = (n - 1) / 2.0 + jitter(rng);
        const double cx = (n - 1) / 2.0 + jitter(rng);
        const double sigma = spec.window_sigma * n;

        prep::VideoClip clip;
        clip.fps = spec.fps;
        clip.subject_id = subject;
        clip.label = c;
        clip.onset = 0;
        clip.apex = apex;
        clip.offset = T - 1;
        for (int t = 0; t < T; ++t) {
          const double ramp = apex > 0 ? std::min(1.0, static_cast<double>(t) / apex) : 1.0;
          imaging::Image frame(n, n, 3);
          for (int y = 0; y < n; ++y) {
            for (int x = 0; x < n; ++x) {
              const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
              const double w = ramp * spec.magnitude * std::exp(-r2 / (2 * sigma * sigma));
              for (int ch = 0; ch < 3; ++ch) {
                frame.at(y, x, ch) = imaging::sample_bilinear(tex, y - w * dy, x - w * dx, ch);
              }
            }
          }
          if (spec.noise_std > 0) {
            for (auto& v : frame.pixels) v += noise(rng);
          }
          imaging::clamp01(frame);
          clip.frames.push_back(std::move(frame));
        }

        char id[64];
        std::snprintf(id, sizeof id, "%s_c%d_%02d", subject, c, k + 1);
        SyntheticItem item;
        item.sample.id = id;
        item.sample.clip_path = std::string("clips/") + id + ".msmt";
        item.sample.subject_id = subject;
        item.sample.label = c;
        item.sample.source = "synthetic";
        item.sample.onset = 0;
        item.sample.apex = apex;
        item.sample.offset = T - 1;
        item.clip = std::move(clip);
        out.push_back(std::move(item));
      }
    }
  }
  return out;
}

}  // namespace msmmt::eval
