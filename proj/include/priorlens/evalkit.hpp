#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "priorlens/blur_synth.hpp"
#include "priorlens/image.hpp"
#include "priorlens/pyramid.hpp"

namespace priorlens::trainkit {
class PriorDeblurModel;
}

namespace priorlens::evalkit {

// Reported for identical images so reports stay finite and serializable.
inline constexpr double kPsnrCapDb = 100.0;

// 10 log10(1 / MSE) over all pixels and channels (RGB, peak 1).
double psnr(const Image& a, const Image& b);

// Mean SSIM: 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2,
// valid-region windows only, averaged over the three channels.
double ssim(const Image& a, const Image& b);

struct ImageMetrics {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::string config_digest;
  std::vector<ImageMetrics> per_image;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::size_t n = 0;

  void finalize();  // recomputes the aggregate from per_image
  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;
};

class Restorer {
 public:
  virtual ~Restorer() = default;
  virtual Image restore(const Image& blurry) = 0;
  virtual std::string config_digest() const = 0;
};

// Output equals input; the blurry-input baseline.
class IdentityRestorer final : public Restorer {
 public:
  Image restore(const Image& blurry) override { return blurry; }
  std::string config_digest() const override;
};

class ModelRestorer final : public Restorer {
 public:
  ModelRestorer(trainkit::PriorDeblurModel& model, std::string digest);
  Image restore(const Image& blurry) override;
  std::string config_digest() const override { return digest_; }

 private:
  trainkit::PriorDeblurModel& model_;
  std::string digest_;
};

// Restores every blurry image of the manifest (outputs quantized to 8 bits,
// exactly as written to PNG) and scores it against the sharp reference.
MetricReport evaluate(Restorer& restorer, const blur_synth::Manifest& manifest,
                      const std::optional<std::filesystem::path>& png_dir = std::nullopt);

// Loads a deblur checkpoint and evaluates it.
MetricReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                                 const std::optional<std::filesystem::path>& png_dir = std::nullopt);

// Digest of the architecture-relevant header fields of a checkpoint.
std::string checkpoint_digest(const std::filesystem::path& checkpoint);

// Perceptually uniform colormap lookup, t clamped to [0, 1].
std::array<float, 3> viridis(double t);

// Channel-mean of a [C,H,W] (or [1,C,H,W]) map, min-max normalized, colored.
// A constant map yields the mid-colormap color and sets *degenerate.
Image colorize_feature(const torch::Tensor& feature, int upscale = 1, bool* degenerate = nullptr);

// Writes {image_id}_prior_L{i}.png for i = 1..3 and returns the paths.
// Degenerate (constant) levels are written in mid-colormap color and
// reported on `warn`.
std::vector<std::filesystem::path> visualize_priors(trainkit::PriorDeblurModel& model, const Image& blurry,
                                                    const std::filesystem::path& out_dir, const std::string& image_id,
                                                    int upscale = 1, std::ostream* warn = nullptr);

}  // namespace priorlens::evalkit
