#include "priorlens/scenes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "priorlens/error.hpp"
#include "priorlens/rng.hpp"

namespace priorlens::scenes {

namespace {

using Color = std::array<float, 3>;

constexpr std::array<const char*, kNumShapeClasses> kNames = {
    "disk", "square", "triangle", "ring", "cross", "hstripes", "vstripes", "checker", "dots", "diamond"};

// Membership test in the shape's local frame, (u, v) in roughly [-1, 1].
bool inside(int cls, double u, double v) {
  const double au = std::abs(u);
  const double av = std::abs(v);
  const bool patch = au < 0.9 && av < 0.9;
  switch (cls) {
    case 0: return u * u + v * v < 0.81;
    case 1: return au < 0.75 && av < 0.75;
    case 2: return v < 0.7 && v > -0.8 + 1.6 * au;
    case 3: {
      const double r2 = u * u + v * v;
      return r2 < 0.9 && r2 > 0.36;
    }
    case 4: return (au < 0.28 && av < 0.9) || (av < 0.28 && au < 0.9);
    case 5: return patch && static_cast<int>(std::floor((v + 0.9) * 2.8)) % 2 == 0;
    case 6: return patch && static_cast<int>(std::floor((u + 0.9) * 2.8)) % 2 == 0;
    case 7:
      return patch && (static_cast<int>(std::floor((u + 0.9) * 2.2)) +
                       static_cast<int>(std::floor((v + 0.9) * 2.2))) % 2 == 0;
    case 8: {
      if (!patch) return false;
      const double cu = std::fmod(u + 0.9, 0.6) - 0.3;
      const double cv = std::fmod(v + 0.9, 0.6) - 0.3;
      return cu * cu + cv * cv < 0.04;
    }
    case 9: return au + av < 0.9;
    default: return false;
  }
}

double luminance(const Color& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

Color random_color(Rng& rng) {
  return {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
          static_cast<float>(rng.uniform())};
}

Color contrasting_color(Rng& rng, const Color& against) {
  Color c = random_color(rng);
  for (int tries = 0; tries < 32 && std::abs(luminance(c) - luminance(against)) < 0.3; ++tries)
    c = random_color(rng);
  return c;
}

struct Placement {
  int cls;
  double cx, cy, radius, angle;
  Color color;
};

// Rotations only for classes whose identity survives them.
bool rotatable(int cls) { return cls <= 4 || cls == 9; }

void paint(Image& img, const Placement& p) {
  const double ca = std::cos(p.angle);
  const double sa = std::sin(p.angle);
  const int y0 = std::max(0, static_cast<int>(p.cy - p.radius * 1.5));
  const int y1 = std::min(img.height(), static_cast<int>(p.cy + p.radius * 1.5) + 1);
  const int x0 = std::max(0, static_cast<int>(p.cx - p.radius * 1.5));
  const int x1 = std::min(img.width(), static_cast<int>(p.cx + p.radius * 1.5) + 1);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      int hits = 0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double dx = (x + 0.25 + 0.5 * sx - p.cx) / p.radius;
          const double dy = (y + 0.25 + 0.5 * sy - p.cy) / p.radius;
          const double u = ca * dx + sa * dy;
          const double v = -sa * dx + ca * dy;
          hits += inside(p.cls, u, v) ? 1 : 0;
        }
      if (hits == 0) continue;
      const float a = hits / 4.0f;
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = (1 - a) * img.at(c, y, x) + a * p.color[c];
    }
  }
}

Image background(int h, int w, Rng& rng, Color& mean_color) {
  const Color a = random_color(rng);
  const Color b = random_color(rng);
  const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double freq = rng.uniform(0.5, 2.5);
  const double amp = rng.uniform(0.0, 0.08);
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double t = 0.5 + 0.5 * (std::cos(theta) * (x / double(w) - 0.5) + std::sin(theta) * (y / double(h) - 0.5));
      const double wave = amp * std::sin(freq * 2.0 * std::numbers::pi * (x + y) / double(w + h) * 4.0);
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>((1 - t) * a[c] + t * b[c] + wave);
    }
  for (int c = 0; c < 3; ++c) mean_color[c] = 0.5f * (a[c] + b[c]);
  return img;
}

}  // namespace

const char* shape_class_name(int cls) {
  if (cls < 0 || cls >= kNumShapeClasses) throw ValidationError("shape class out of range");
  return kNames[cls];
}

Image render_shape_sample(int cls, int size, std::uint64_t seed) {
  if (cls < 0 || cls >= kNumShapeClasses) throw ValidationError("shape class out of range");
  Rng rng(seed);
  Color bg_mean{};
  Image img = background(size, size, rng, bg_mean);
  Placement p;
  p.cls = cls;
  p.radius = size * rng.uniform(0.28, 0.44);
  p.cx = size * 0.5 + rng.uniform(-0.12, 0.12) * size;
  p.cy = size * 0.5 + rng.uniform(-0.12, 0.12) * size;
  p.angle = rotatable(cls) ? rng.uniform(0.0, 2.0 * std::numbers::pi) : rng.uniform(-0.15, 0.15);
  p.color = contrasting_color(rng, bg_mean);
  paint(img, p);
  for (auto& v : img.data()) v = static_cast<float>(v + 0.02 * rng.normal());
  img.clamp01();
  return img;
}

ClassificationSet make_shape_classification_set(int count, int size, std::uint64_t seed, int num_classes) {
  if (num_classes < 2 || num_classes > kNumShapeClasses)
    throw ValidationError("classification set needs between 2 and 10 classes");
  if (count < num_classes) throw ValidationError("classification set smaller than its class count");
  ClassificationSet set;
  set.num_classes = num_classes;
  for (int i = 0; i < count; ++i) {
    const int cls = i % num_classes;
    set.images.push_back(render_shape_sample(cls, size, mix_seed(seed, static_cast<std::uint64_t>(i))));
    set.labels.push_back(cls);
  }
  return set;
}

Image render_scene(int height, int width, std::uint64_t seed) {
  Rng rng(seed);
  Color bg_mean{};
  Image img = background(height, width, rng, bg_mean);
  const int objects = 5 + static_cast<int>(rng.below(4));
  const double scale = std::min(height, width);
  for (int i = 0; i < objects; ++i) {
    Placement p;
    p.cls = static_cast<int>(rng.below(kNumShapeClasses));
    p.radius = scale * rng.uniform(0.1, 0.28);
    p.cx = rng.uniform(0.0, width);
    p.cy = rng.uniform(0.0, height);
    p.angle = rotatable(p.cls) ? rng.uniform(0.0, 2.0 * std::numbers::pi) : rng.uniform(-0.15, 0.15);
    p.color = contrasting_color(rng, bg_mean);
    paint(img, p);
  }
  img.clamp01();
  return img;
}

std::vector<std::string> write_scenes(const std::string& dir, int count, int size, std::uint64_t seed) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create scene directory: " + dir);
  std::vector<std::string> names;
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d", i);
    write_png(std::filesystem::path(dir) / (std::string(name) + ".png"),
              render_scene(size, size, mix_seed(seed, static_cast<std::uint64_t>(i))));
    names.emplace_back(name);
  }
  return names;
}

}  // namespace priorlens::scenes
