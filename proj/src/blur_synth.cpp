#include "priorlens/blur_synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

#include "priorlens/error.hpp"
#include "priorlens/rng.hpp"

namespace priorlens::blur_synth {

namespace fs = std::filesystem;

namespace {

void check_support(int support) {
  if (support < BlurKernel::kMinSupport || support > BlurKernel::kMaxSupport || support % 2 == 0)
    throw ValidationError("kernel support must be odd and in [3, 63], got " +
                          std::to_string(support));
}

struct Point {
  double x = 0.0;
  double y = 0.0;
};

Point catmull_rom(const Point& p0, const Point& p1, const Point& p2, const Point& p3, double t) {
  const double t2 = t * t;
  const double t3 = t2 * t;
  auto blend = [&](double a, double b, double c, double d) {
    return 0.5 * ((2.0 * b) + (-a + c) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 +
                  (-a + 3.0 * b - 3.0 * c + d) * t3);
  };
  return {blend(p0.x, p1.x, p2.x, p3.x), blend(p0.y, p1.y, p2.y, p3.y)};
}

// Reflect without repeating the edge sample (…2 1 | 0 1 2 … n-1 | n-2 …).
int reflect(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

}  // namespace

BlurKernel::BlurKernel(int support, std::vector<double> weights)
    : support_(support), weights_(std::move(weights)) {
  check_support(support);
  if (weights_.size() != static_cast<std::size_t>(support) * support)
    throw ValidationError("kernel weight count does not match support^2");
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("kernel weights must be finite and >= 0");
    total += w;
  }
  if (total <= 0.0) throw ValidationError("kernel weights sum to zero");
  for (double& w : weights_) w /= total;
}

BlurKernel BlurKernel::delta(int support) {
  check_support(support);
  std::vector<double> w(static_cast<std::size_t>(support) * support, 0.0);
  const int c = support / 2;
  w[static_cast<std::size_t>(c) * support + c] = 1.0;
  return BlurKernel(support, std::move(w));
}

double BlurKernel::sum() const {
  double s = 0.0;
  for (double w : weights_) s += w;
  return s;
}

int BlurKernel::nonzero_count() const {
  return static_cast<int>(std::count_if(weights_.begin(), weights_.end(), [](double w) { return w > 0.0; }));
}

void NoiseSpec::validate() const {
  if (!(sigma >= 0.0 && sigma <= 0.1)) throw ValidationError("noise sigma must be in [0, 0.1]");
}

void TrajectoryParams::validate(int support) const {
  if (num_control_points < 2) throw ValidationError("trajectory needs at least 2 control points");
  if (!(max_extent >= 0.0)) throw ValidationError("max_extent must be >= 0");
  if (max_extent > support) throw ValidationError("max_extent exceeds kernel support");
  if (!(anxiety >= 0.0)) throw ValidationError("anxiety must be >= 0");
}

BlurKernel synthesize_kernel(const TrajectoryParams& params, int support) {
  check_support(support);
  params.validate(support);
  if (params.max_extent == 0.0) return BlurKernel::delta(support);

  Rng rng(params.seed);
  std::vector<Point> ctrl(params.num_control_points);
  double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (std::size_t i = 1; i < ctrl.size(); ++i) {
    heading += params.anxiety * rng.normal();
    const double step = rng.uniform(0.5, 1.5);
    ctrl[i] = {ctrl[i - 1].x + step * std::cos(heading), ctrl[i - 1].y + step * std::sin(heading)};
  }

  constexpr int kSamplesPerSegment = 512;
  std::vector<Point> path;
  path.reserve(ctrl.size() * kSamplesPerSegment);
  const std::size_t n = ctrl.size();
  for (std::size_t seg = 0; seg + 1 < n; ++seg) {
    const Point& p0 = ctrl[seg == 0 ? 0 : seg - 1];
    const Point& p3 = ctrl[std::min(seg + 2, n - 1)];
    for (int s = 0; s < kSamplesPerSegment; ++s)
      path.push_back(catmull_rom(p0, ctrl[seg], ctrl[seg + 1], p3,
                                 static_cast<double>(s) / kSamplesPerSegment));
  }
  path.push_back(ctrl.back());

  auto [minx_it, maxx_it] = std::minmax_element(path.begin(), path.end(),
                                                [](const Point& a, const Point& b) { return a.x < b.x; });
  auto [miny_it, maxy_it] = std::minmax_element(path.begin(), path.end(),
                                                [](const Point& a, const Point& b) { return a.y < b.y; });
  const double w = maxx_it->x - minx_it->x;
  const double h = maxy_it->y - miny_it->y;
  const double extent = std::max(w, h);
  if (extent < 1e-12) return BlurKernel::delta(support);

  // The splat footprint spans one extra cell, so the path may use S-1 px.
  const double target = std::min(params.max_extent, static_cast<double>(support - 1));
  const double scale = target / extent;
  const double cx = 0.5 * (minx_it->x + maxx_it->x);
  const double cy = 0.5 * (miny_it->y + maxy_it->y);
  const double centre = 0.5 * (support - 1);

  std::vector<double> weights(static_cast<std::size_t>(support) * support, 0.0);
  for (const Point& p : path) {
    const double x = std::clamp(centre + (p.x - cx) * scale, 0.0, support - 1.0);
    const double y = std::clamp(centre + (p.y - cy) * scale, 0.0, support - 1.0);
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0;
    const double fy = y - y0;
    const int x1 = std::min(x0 + 1, support - 1);
    const int y1 = std::min(y0 + 1, support - 1);
    weights[static_cast<std::size_t>(y0) * support + x0] += (1 - fx) * (1 - fy);
    weights[static_cast<std::size_t>(y0) * support + x1] += fx * (1 - fy);
    weights[static_cast<std::size_t>(y1) * support + x0] += (1 - fx) * fy;
    weights[static_cast<std::size_t>(y1) * support + x1] += fx * fy;
  }
  return BlurKernel(support, std::move(weights));
}

Image convolve_reflect(const Image& image, const BlurKernel& kernel) {
  const int S = kernel.support();
  const int H = image.height();
  const int W = image.width();
  if (S > std::min(H, W)) throw ValidationError("kernel support larger than image");

  struct Tap {
    int dy, dx;
    double w;
  };
  std::vector<Tap> taps;
  const int r = S / 2;
  for (int u = 0; u < S; ++u)
    for (int v = 0; v < S; ++v)
      if (kernel.at(u, v) != 0.0) taps.push_back({u - r, v - r, kernel.at(u, v)});

  Image out(H, W);
  std::vector<double> acc(static_cast<std::size_t>(W));
  for (int c = 0; c < Image::kChannels; ++c) {
    for (int y = 0; y < H; ++y) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (const Tap& t : taps) {
        // Convolution flips the kernel: out(y,x) = sum k(u,v) x(y-dy, x-dx).
        const int sy = reflect(y - t.dy, H);
        for (int x = 0; x < W; ++x) acc[x] += t.w * image.at(c, sy, reflect(x - t.dx, W));
      }
      for (int x = 0; x < W; ++x) out.at(c, y, x) = static_cast<float>(acc[x]);
    }
  }
  return out;
}

Image apply_degradation(const Image& sharp, const BlurKernel& kernel, const NoiseSpec& noise,
                        std::uint64_t seed) {
  noise.validate();
  Image out = convolve_reflect(sharp, kernel);
  if (noise.sigma > 0.0) {
    Rng rng(seed);
    for (auto& v : out.data()) v = static_cast<float>(v + noise.sigma * rng.normal());
  }
  out.clamp01();
  return out;
}

void DatasetConfig::validate() const {
  check_support(support);
  trajectory.validate(support);
  noise.validate();
}

nlohmann::json DatasetConfig::to_json() const {
  return {{"support", support},
          {"num_control_points", trajectory.num_control_points},
          {"max_extent", trajectory.max_extent},
          {"anxiety", trajectory.anxiety},
          {"sigma", noise.sigma},
          {"seed", seed}};
}

DatasetConfig DatasetConfig::from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.support = j.value("support", c.support);
  c.trajectory.num_control_points = j.value("num_control_points", c.trajectory.num_control_points);
  c.trajectory.max_extent = j.value("max_extent", c.trajectory.max_extent);
  c.trajectory.anxiety = j.value("anxiety", c.trajectory.anxiety);
  c.noise.sigma = j.value("sigma", c.noise.sigma);
  c.seed = j.value("seed", c.seed);
  return c;
}

DatasetConfig preset(const std::string& name, int image_min_dim) {
  if (image_min_dim < 32) throw ValidationError("dataset images must be at least 32 px");
  DatasetConfig c;
  auto odd_support_for = [&](double extent) {
    int s = static_cast<int>(std::ceil(extent)) + 2;
    if (s % 2 == 0) ++s;
    return std::clamp(s, BlurKernel::kMinSupport, std::min(BlurKernel::kMaxSupport, image_min_dim - (image_min_dim % 2 == 0)));
  };
  double extent = 0.0;
  if (name == "mild") {
    extent = image_min_dim / 16.0;
  } else if (name == "moderate") {
    extent = image_min_dim / 8.0;
  } else if (name == "severe") {
    extent = image_min_dim / 4.0;
  } else {
    throw ValidationError("unknown blur preset: " + name);
  }
  c.support = odd_support_for(extent);
  c.trajectory.max_extent = std::min(extent, static_cast<double>(c.support - 1));
  return c;
}

nlohmann::json Manifest::to_json() const {
  nlohmann::json pj = nlohmann::json::array();
  for (const auto& p : pairs)
    pj.push_back({{"id", p.id}, {"sharp", p.sharp}, {"blurry", p.blurry},
                  {"kernel_seed", p.kernel_seed}, {"sigma", p.sigma}});
  return {{"version", version}, {"config", config.to_json()}, {"pairs", pj}};
}

Manifest Manifest::from_json(const nlohmann::json& j, fs::path root) {
  Manifest m;
  m.version = j.at("version").get<int>();
  if (m.version != kVersion) throw ValidationError("unsupported manifest version " + std::to_string(m.version));
  if (j.contains("config")) m.config = DatasetConfig::from_json(j.at("config"));
  for (const auto& p : j.at("pairs")) {
    PairEntry e;
    e.id = p.value("id", std::string());
    e.sharp = p.at("sharp").get<std::string>();
    e.blurry = p.at("blurry").get<std::string>();
    e.kernel_seed = p.at("kernel_seed").get<std::uint64_t>();
    e.sigma = p.at("sigma").get<double>();
    if (e.id.empty()) e.id = fs::path(e.blurry).stem().string();
    m.pairs.push_back(std::move(e));
  }
  m.root = std::move(root);
  return m;
}

Manifest Manifest::load(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw ValidationError("cannot read manifest: " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  return from_json(j, manifest_path.parent_path());
}

void Manifest::save(const fs::path& manifest_path) const {
  std::ofstream out(manifest_path);
  if (!out) throw RuntimeFailure("cannot write manifest: " + manifest_path.string());
  out << to_json().dump(2) << "\n";
}

std::uint64_t pair_kernel_seed(std::uint64_t dataset_seed, std::size_t index) {
  return mix_seed(dataset_seed, index);
}

std::uint64_t noise_seed_for(std::uint64_t kernel_seed) { return splitmix64(kernel_seed ^ 0x6e6f697365ULL); }

namespace {

Image degrade_pair(const Image& sharp, const DatasetConfig& config, std::uint64_t kernel_seed, double sigma) {
  TrajectoryParams tp = config.trajectory;
  tp.seed = kernel_seed;
  const BlurKernel k = synthesize_kernel(tp, config.support);
  return quantize8(apply_degradation(sharp, k, NoiseSpec{sigma}, noise_seed_for(kernel_seed)));
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ValidationError("cannot create output directory: " + dir.string());
}

}  // namespace

Image regenerate_blurry(const Manifest& manifest, const PairEntry& pair) {
  return degrade_pair(read_png(manifest.sharp_path(pair)), manifest.config, pair.kernel_seed, pair.sigma);
}

Manifest build_dataset(const std::vector<Image>& sharp, const std::vector<std::string>& names,
                       const fs::path& out_dir, int n_pairs, const DatasetConfig& config) {
  config.validate();
  if (sharp.empty()) throw ValidationError("no sharp source images");
  if (names.size() != sharp.size()) throw ValidationError("sharp image / name count mismatch");
  if (n_pairs < 1) throw ValidationError("n_pairs must be >= 1");
  for (const auto& img : sharp)
    if (img.height() < 32 || img.width() < 32) throw ValidationError("dataset images must be at least 32x32");

  ensure_dir(out_dir / "sharp");
  ensure_dir(out_dir / "blurry");

  Manifest m;
  m.config = config;
  m.root = out_dir;
  std::vector<Image> stored(sharp.size());
  for (std::size_t s = 0; s < sharp.size() && s < static_cast<std::size_t>(n_pairs); ++s) {
    stored[s] = quantize8(sharp[s]);
    write_png(out_dir / "sharp" / (names[s] + ".png"), stored[s]);
  }
  for (int i = 0; i < n_pairs; ++i) {
    const std::size_t s = static_cast<std::size_t>(i) % sharp.size();
    char id[32];
    std::snprintf(id, sizeof(id), "pair_%04d", i);
    PairEntry e;
    e.id = id;
    e.sharp = "sharp/" + names[s] + ".png";
    e.blurry = std::string("blurry/") + id + ".png";
    e.kernel_seed = pair_kernel_seed(config.seed, static_cast<std::size_t>(i));
    e.sigma = config.noise.sigma;
    write_png(out_dir / e.blurry, degrade_pair(stored[s], config, e.kernel_seed, e.sigma));
    m.pairs.push_back(std::move(e));
  }
  m.save(out_dir / "manifest.json");
  return m;
}

Manifest build_dataset(const fs::path& sharp_dir, const fs::path& out_dir, int n_pairs,
                       const DatasetConfig& config) {
  if (!fs::is_directory(sharp_dir)) throw ValidationError("sharp directory does not exist: " + sharp_dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(sharp_dir)) {
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (entry.is_regular_file() && ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("no PNG images in " + sharp_dir.string());
  std::vector<Image> images;
  std::vector<std::string> names;
  for (const auto& f : files) {
    images.push_back(read_png(f));
    names.push_back(f.stem().string());
  }
  return build_dataset(images, names, out_dir, n_pairs, config);
}

}  // namespace priorlens::blur_synth
