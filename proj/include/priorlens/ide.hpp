#pragma once

#include <array>
#include <optional>

#include <torch/torch.h>

#include "priorlens/ablation.hpp"
#include "priorlens/pyramid.hpp"

// Image deblurring branch: a three-level UNet whose decoder skip connections
// are modulated by semantic priors (multi-level aggregation followed by a
// semantic attention transform).
namespace priorlens::ide {

// M^i = gate(cat(f^i, resize(f^t), t != i)) * f^i + f^i with a 1x1 gate conv
// and bilinear resizing of the other levels to level i.
class MlaImpl : public torch::nn::Module {
 public:
  MlaImpl(PyramidSpec spec, int level_index);
  torch::Tensor forward(const FeaturePyramid& f_pri);
  torch::nn::Conv2d& gate() { return gate_; }
  int level_index() const { return level_; }

 private:
  int level_;
  torch::nn::Conv2d gate_{nullptr};
};
TORCH_MODULE(Mla);

struct SpeOutput {
  torch::Tensor modulated;  // f_sa
  torch::Tensor scale;      // mu
  torch::Tensor shift;      // sigma
};

// f_sa = mu * (f_de + f_en) + sigma, mu = conv1(M), sigma = conv2(M), with M
// bilinearly resized to the feature resolution first. Initialized near the
// identity (mu ~ 1, sigma ~ 0).
class SatImpl : public torch::nn::Module {
 public:
  SatImpl(std::int64_t prior_channels, std::int64_t feature_channels);
  SpeOutput forward(const torch::Tensor& prior, const torch::Tensor& f_en, const torch::Tensor& f_de);
  torch::nn::Conv2d& scale_conv() { return scale_; }
  torch::nn::Conv2d& shift_conv() { return shift_; }

 private:
  torch::nn::Conv2d scale_{nullptr};
  torch::nn::Conv2d shift_{nullptr};
};
TORCH_MODULE(Sat);

struct DeblurNetOptions {
  PyramidSpec widths{};       // encoder/decoder widths per level
  PyramidSpec prior_spec{};   // channel widths of incoming priors
  std::int64_t head_width = 32;
  EmbeddingMode mode = EmbeddingMode::kSat;
  bool use_mla = true;
};

// Encoder features f_en^i and decoder features f_de^i share shape per level.
// The network predicts a residual that is added to the blurry input; outputs
// are not clamped.
class DeblurNetImpl : public torch::nn::Module {
 public:
  explicit DeblurNetImpl(DeblurNetOptions options = {});

  // priors: f_pri pyramid; required unless the mode is kNone.
  torch::Tensor forward(const torch::Tensor& blurry, const FeaturePyramid* priors = nullptr);

  // Per-level prior fed to the decoder: M^i under MLA, otherwise f_pri^i.
  torch::Tensor aggregated_prior(const FeaturePyramid& priors, int level_index);

  const DeblurNetOptions& options() const { return options_; }
  Sat& sat(int level_index) { return sat_.at(level_index); }
  Mla& mla(int level_index) { return mla_.at(level_index); }

  // Parameters that belong to the prior-embedding layers (MLA, SAT, concat fusion).
  std::vector<torch::Tensor> embedding_parameters() const;

 private:
  torch::Tensor fuse(int level_index, const torch::Tensor& f_en, const torch::Tensor& f_de, const FeaturePyramid* priors);

  DeblurNetOptions options_;
  torch::nn::Conv2d head_{nullptr};
  std::array<torch::nn::Conv2d, kLevels> enc_down_{nullptr, nullptr, nullptr};
  std::array<torch::nn::Conv2d, kLevels> enc_refine_{nullptr, nullptr, nullptr};
  std::array<torch::nn::Conv2d, 2> bottleneck_{nullptr, nullptr};
  std::array<torch::nn::Conv2d, kLevels> dec_refine_{nullptr, nullptr, nullptr};
  std::array<torch::nn::Conv2d, kLevels> dec_up_{nullptr, nullptr, nullptr};
  torch::nn::Conv2d full_refine_{nullptr};
  torch::nn::Conv2d tail_{nullptr};
  std::array<Mla, kLevels> mla_{nullptr, nullptr, nullptr};
  std::array<Sat, kLevels> sat_{nullptr, nullptr, nullptr};
  std::array<torch::nn::Conv2d, kLevels> concat_{nullptr, nullptr, nullptr};
};
TORCH_MODULE(DeblurNet);

// Inference: forward pass clamped to [0, 1].
torch::Tensor deblur_forward(DeblurNet& net, const torch::Tensor& blurry, const FeaturePyramid* priors = nullptr);

}  // namespace priorlens::ide
