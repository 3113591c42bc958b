#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "priorlens/image.hpp"

namespace priorlens::blur_synth {

// Normalized, nonnegative S x S point-spread function with S odd in [3, 63].
class BlurKernel {
 public:
  static constexpr int kMinSupport = 3;
  static constexpr int kMaxSupport = 63;

  // Validates the weights and renormalizes them to sum to exactly 1 in double.
  BlurKernel(int support, std::vector<double> weights);
  static BlurKernel delta(int support);

  int support() const { return support_; }
  double at(int y, int x) const { return weights_[static_cast<std::size_t>(y) * support_ + x]; }
  const std::vector<double>& weights() const { return weights_; }
  double sum() const;
  int nonzero_count() const;

 private:
  int support_;
  std::vector<double> weights_;
};

struct NoiseSpec {
  double sigma = 0.01;
  void validate() const;
};

struct TrajectoryParams {
  int num_control_points = 6;
  double max_extent = 9.0;  // px, bounding box of the camera path
  double anxiety = 0.6;     // heading jitter per control point, radians
  std::uint64_t seed = 0;
  void validate(int support) const;
};

// Random smooth camera-shake path through jittered control points, Catmull-Rom
// interpolated and splatted bilinearly on the kernel grid.
BlurKernel synthesize_kernel(const TrajectoryParams& params, int support);

// y = clamp(k * x + n, 0, 1): true convolution per channel, reflective
// boundary, white Gaussian noise drawn from `seed`.
Image apply_degradation(const Image& sharp, const BlurKernel& kernel, const NoiseSpec& noise,
                        std::uint64_t seed);

// Convolution only (no noise, no clamp); exposed for energy checks.
Image convolve_reflect(const Image& image, const BlurKernel& kernel);

struct DatasetConfig {
  TrajectoryParams trajectory;
  NoiseSpec noise;
  int support = 15;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DatasetConfig from_json(const nlohmann::json& j);
};

// Presets scale with the source image size. "severe" keeps the path extent
// at or above a quarter of the shorter image side (capped by the kernel grid).
DatasetConfig preset(const std::string& name, int image_min_dim);

struct PairEntry {
  std::string id;
  std::string sharp;   // relative to the manifest directory
  std::string blurry;  // relative to the manifest directory
  std::uint64_t kernel_seed = 0;
  double sigma = 0.0;
};

struct Manifest {
  static constexpr int kVersion = 1;
  int version = kVersion;
  DatasetConfig config;
  std::vector<PairEntry> pairs;
  std::filesystem::path root;  // directory the relative paths resolve against

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j, std::filesystem::path root);
  static Manifest load(const std::filesystem::path& manifest_path);
  void save(const std::filesystem::path& manifest_path) const;

  std::filesystem::path sharp_path(const PairEntry& p) const { return root / p.sharp; }
  std::filesystem::path blurry_path(const PairEntry& p) const { return root / p.blurry; }
};

// Seeds derived per pair so any single pair can be regenerated in isolation.
std::uint64_t pair_kernel_seed(std::uint64_t dataset_seed, std::size_t index);
std::uint64_t noise_seed_for(std::uint64_t kernel_seed);

// Re-synthesizes the blurry image of one manifest entry from its recorded seed.
Image regenerate_blurry(const Manifest& manifest, const PairEntry& pair);

// Writes sharp/ and blurry/ PNGs plus manifest.json under out_dir. Sharp images
// are cycled in sorted filename order, so every source is used once n_pairs
// reaches the source count.
Manifest build_dataset(const std::filesystem::path& sharp_dir, const std::filesystem::path& out_dir,
                       int n_pairs, const DatasetConfig& config);

// Same, from in-memory sharp images (named by `names`).
Manifest build_dataset(const std::vector<Image>& sharp, const std::vector<std::string>& names,
                       const std::filesystem::path& out_dir, int n_pairs,
                       const DatasetConfig& config);

}  // namespace priorlens::blur_synth
