#include "priorlens/evalkit.hpp"

#include <cmath>
#include <fstream>
#include <iostream>

#include "priorlens/checkpoint.hpp"
#include "priorlens/error.hpp"
#include "priorlens/trainkit.hpp"

namespace priorlens::evalkit {

namespace fs = std::filesystem;

namespace {

void check_same_shape(const Image& a, const Image& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width())
    throw ValidationError(std::string(what) + ": image shapes differ");
}

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> g{};
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Separable valid-region filter of one plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int h, int w, const std::array<double, kWindow>& g) {
  const int oh = h - kWindow + 1;
  const int ow = w - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * plane[static_cast<std::size_t>(y) * w + x + k];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * rows[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  check_same_shape(a, b, "psnr");
  double se = 0.0;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = static_cast<double>(da[i]) - static_cast<double>(db[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(da.size());
  if (mse == 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
  check_same_shape(a, b, "ssim");
  if (a.height() < kWindow || a.width() < kWindow) throw ValidationError("ssim: image smaller than the 11x11 window");
  const auto g = gaussian_window();
  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  const int h = a.height();
  const int w = a.width();
  const std::size_t n = static_cast<std::size_t>(h) * w;

  double total = 0.0;
  for (int c = 0; c < Image::kChannels; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) {
        const std::size_t i = static_cast<std::size_t>(r) * w + col;
        x[i] = a.at(c, r, col);
        y[i] = b.at(c, r, col);
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
      }
    const auto mx = filter_valid(x, h, w, g);
    const auto my = filter_valid(y, h, w, g);
    const auto sxx = filter_valid(xx, h, w, g);
    const auto syy = filter_valid(yy, h, w, g);
    const auto sxy = filter_valid(xy, h, w, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      acc += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / Image::kChannels;
}

void MetricReport::finalize() {
  n = per_image.size();
  double ps = 0.0;
  double ss = 0.0;
  for (const auto& m : per_image) {
    ps += m.psnr;
    ss += m.ssim;
  }
  mean_psnr = n ? ps / n : 0.0;
  mean_ssim = n ? ss / n : 0.0;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& m : per_image) items.push_back({{"name", m.name}, {"psnr", m.psnr}, {"ssim", m.ssim}});
  return {{"config_digest", config_digest},
          {"metric_notes", {{"psnr", "RGB, peak 1.0, capped at 100 dB"},
                            {"ssim", "11x11 gaussian sigma 1.5, C1=0.01^2, C2=0.03^2, RGB channel mean"}}},
          {"per_image", items},
          {"aggregate", {{"mean_psnr", mean_psnr}, {"mean_ssim", mean_ssim}, {"n", n}}}};
}

void MetricReport::save(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write report: " + path.string());
  out << to_json().dump(2) << "\n";
}

std::string IdentityRestorer::config_digest() const { return checkpoint::digest_hex("identity"); }

ModelRestorer::ModelRestorer(trainkit::PriorDeblurModel& model, std::string digest)
    : model_(model), digest_(std::move(digest)) {}

Image ModelRestorer::restore(const Image& blurry) { return model_.restore(blurry); }

MetricReport evaluate(Restorer& restorer, const blur_synth::Manifest& manifest, const std::optional<fs::path>& png_dir) {
  if (manifest.pairs.empty()) throw ValidationError("evaluate: manifest lists no pairs");
  if (png_dir) fs::create_directories(*png_dir);
  MetricReport report;
  report.config_digest = restorer.config_digest();
  for (const auto& pair : manifest.pairs) {
    const auto blurry = read_png(manifest.blurry_path(pair));
    const auto sharp = read_png(manifest.sharp_path(pair));
    if (blurry.height() != sharp.height() || blurry.width() != sharp.width())
      throw ValidationError("evaluate: pair " + pair.id + " has mismatched blurry/sharp sizes");
    const auto restored = quantize8(restorer.restore(blurry));
    if (png_dir) write_png(*png_dir / (pair.id + "_deblurred.png"), restored);
    report.per_image.push_back({pair.id, psnr(restored, sharp), ssim(restored, sharp)});
  }
  report.finalize();
  return report;
}

std::string checkpoint_digest(const fs::path& checkpoint) {
  const auto c = checkpoint::Container::load(checkpoint);
  nlohmann::json key = {{"arch_descriptor", c.header.value("arch_descriptor", std::string())},
                        {"ablation", c.header.value("ablation", nlohmann::json())},
                        {"train_config", c.header.value("train_config", nlohmann::json())},
                        {"step", c.header.value("step", 0)}};
  return checkpoint::digest_hex(key.dump());
}

MetricReport evaluate_checkpoint(const fs::path& checkpoint, const fs::path& manifest_path,
                                 const std::optional<fs::path>& png_dir) {
  auto model = trainkit::PriorDeblurModel::from_checkpoint(checkpoint);
  const auto manifest = blur_synth::Manifest::load(manifest_path);
  ModelRestorer restorer(model, checkpoint_digest(checkpoint));
  return evaluate(restorer, manifest, png_dir);
}

std::array<float, 3> viridis(double t) {
  static constexpr std::array<std::array<float, 3>, 17> kTable = {{
      {0.267004f, 0.004874f, 0.329415f}, {0.282327f, 0.094955f, 0.417331f}, {0.278826f, 0.175490f, 0.483397f},
      {0.258965f, 0.251537f, 0.524736f}, {0.229739f, 0.322361f, 0.545706f}, {0.199430f, 0.387607f, 0.554642f},
      {0.172719f, 0.448791f, 0.557885f}, {0.149039f, 0.508051f, 0.557250f}, {0.127568f, 0.566949f, 0.550556f},
      {0.120638f, 0.625828f, 0.533488f}, {0.157851f, 0.683765f, 0.501686f}, {0.246070f, 0.738910f, 0.452024f},
      {0.369214f, 0.788888f, 0.382914f}, {0.515992f, 0.831158f, 0.294279f}, {0.678489f, 0.863742f, 0.189503f},
      {0.845561f, 0.887322f, 0.099702f}, {0.993248f, 0.906157f, 0.143936f},
  }};
  const double s = std::clamp(t, 0.0, 1.0) * (kTable.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(s), kTable.size() - 2);
  const float f = static_cast<float>(s - i);
  std::array<float, 3> out{};
  for (int c = 0; c < 3; ++c) out[c] = (1 - f) * kTable[i][c] + f * kTable[i + 1][c];
  return out;
}

Image colorize_feature(const torch::Tensor& feature, int upscale, bool* degenerate) {
  if (upscale < 1) throw ValidationError("upscale factor must be >= 1");
  auto f = feature.detach().to(torch::kCPU, torch::kFloat64);
  if (f.dim() == 4) f = f.squeeze(0);
  if (f.dim() != 3) throw ValidationError("colorize_feature expects [C,H,W]");
  const auto mean = f.mean(0).contiguous();
  const double lo = mean.min().item<double>();
  const double hi = mean.max().item<double>();
  const bool flat = !(hi > lo);
  if (degenerate) *degenerate = flat;

  const int h = static_cast<int>(mean.size(0));
  const int w = static_cast<int>(mean.size(1));
  const auto* p = mean.data_ptr<double>();
  Image img(h * upscale, w * upscale);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double t = flat ? 0.5 : (p[y * w + x] - lo) / (hi - lo);
      const auto rgb = viridis(t);
      for (int dy = 0; dy < upscale; ++dy)
        for (int dx = 0; dx < upscale; ++dx)
          for (int c = 0; c < 3; ++c) img.at(c, y * upscale + dy, x * upscale + dx) = rgb[c];
    }
  return img;
}

std::vector<fs::path> visualize_priors(trainkit::PriorDeblurModel& model, const Image& blurry, const fs::path& out_dir,
                                       const std::string& image_id, int upscale, std::ostream* warn) {
  if (!model.has_student()) throw ValidationError("checkpoint has no prior branch to visualize");
  if (blurry.height() % kStrideMultiple || blurry.width() % kStrideMultiple)
    throw ValidationError("viz-priors: image dimensions must be divisible by 8");
  torch::NoGradGuard guard;
  const auto f_pri = model.priors(to_tensor(blurry).unsqueeze(0));
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (int i = 0; i < kLevels; ++i) {
    bool flat = false;
    const auto img = colorize_feature(f_pri[i], upscale, &flat);
    const auto path = out_dir / (image_id + "_prior_L" + std::to_string(i + 1) + ".png");
    if (flat && warn) *warn << "warning: prior level " << (i + 1) << " is constant; wrote mid-colormap image\n";
    write_png(path, img);
    written.push_back(path);
  }
  return written;
}

}  // namespace priorlens::evalkit
