#pragma once

#include <array>

#include <torch/torch.h>

#include "priorlens/pyramid.hpp"

// Semantic prior learning: the student extractor, cross-level fusion of its
// pyramid, and the hierarchical-context distillation losses.
namespace priorlens::spl {

// Student prior extractor on blurry input. Level outputs are taken before the
// ReLU so they can match the teacher's nonnegative features from either side.
// It is deeper than the teacher per stage because it must also undo the blur.
class StudentNetImpl : public torch::nn::Module {
 public:
  static constexpr int kDefaultRefineDepth = 2;
  explicit StudentNetImpl(PyramidSpec spec = {}, int refine_depth = kDefaultRefineDepth);
  FeaturePyramid forward(const torch::Tensor& blurry);
  const PyramidSpec& spec() const { return encoder_->spec(); }

 private:
  PyramidEncoder encoder_{nullptr};
};
TORCH_MODULE(StudentNet);

// Cross-level connection. For the two shallower levels
//   deep  = up(proj(m^{i+1}))                 (1x1 conv, bilinear x2)
//   a^i   = sigmoid(conv3x3(cat(m^i, deep)))
//   f^i   = a^i * m^i + a^i * deep
// and the deepest level passes through untouched.
class ClcImpl : public torch::nn::Module {
 public:
  explicit ClcImpl(PyramidSpec spec = {});
  FeaturePyramid forward(const FeaturePyramid& m);

  // level_index is 0 or 1 (pyramid levels 1 and 2).
  torch::Tensor deep_term(const FeaturePyramid& m, int level_index);
  torch::Tensor attention(const FeaturePyramid& m, int level_index);

  torch::nn::Conv2d& projection(int level_index) { return proj_.at(level_index); }
  torch::nn::Conv2d& attention_conv(int level_index) { return att_.at(level_index); }

 private:
  PyramidSpec spec_;
  std::array<torch::nn::Conv2d, 2> proj_{nullptr, nullptr};
  std::array<torch::nn::Conv2d, 2> att_{nullptr, nullptr};
};
TORCH_MODULE(Clc);

enum class DistanceMode {
  kNorm,  // Frobenius norm of each pooled difference
  kMse,   // mean squared pooled difference
};

struct HclOptions {
  DistanceMode mode = DistanceMode::kNorm;
  // Permit maps smaller than 4x4: pooling factors larger than the map are
  // skipped and the remaining terms rescaled by 3 / (#factors used).
  bool allow_small_maps = false;
};

// Sum over pool factors k in {1, 2, 4} of the distance between avg_k(a) and
// avg_k(b); per-sample, averaged over the batch. No spatial normalization.
torch::Tensor hcl_sum(const torch::Tensor& a, const torch::Tensor& b, const HclOptions& options = {});

// Hierarchical context loss: hcl_sum / (W * H) in norm mode; in MSE mode the
// per-factor means already normalize and hcl equals hcl_sum.
torch::Tensor hcl(const torch::Tensor& a, const torch::Tensor& b, const HclOptions& options = {});

// (1/L) sum_i hcl(f_pri^i, f_gt^i). The 1/(W^i H^i) factor is applied once,
// inside hcl.
torch::Tensor prior_loss(const FeaturePyramid& f_pri, const FeaturePyramid& f_gt, const HclOptions& options = {});

// Same reduction over the raw student pyramid (no cross-level fusion).
torch::Tensor plain_prior_loss(const FeaturePyramid& m, const FeaturePyramid& f_gt, const HclOptions& options = {});

}  // namespace priorlens::spl
