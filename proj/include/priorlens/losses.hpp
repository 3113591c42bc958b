#pragma once

#include <functional>
#include <optional>

#include <torch/torch.h>

#include "priorlens/ablation.hpp"
#include "priorlens/pyramid.hpp"
#include "priorlens/spl.hpp"

namespace priorlens::losses {

struct LossWeights {
  double alpha = 0.01;  // perceptual
  double beta = 0.1;    // prior distillation
  void validate() const;
};

// Feature extractor phi for the perceptual term.
using FeatureFn = std::function<torch::Tensor(const torch::Tensor&)>;

// (1/(H W)) sum over pixels and channels of |gt - pred|; batch mean.
torch::Tensor l1_loss(const torch::Tensor& pred, const torch::Tensor& gt);

// (1/(Hp Wp C)) ||phi(gt) - phi(pred)||_2 on precomputed features; batch mean.
torch::Tensor perceptual_from_features(const torch::Tensor& phi_pred, const torch::Tensor& phi_gt);
torch::Tensor perceptual_loss(const torch::Tensor& pred, const torch::Tensor& gt, const FeatureFn& phi);

struct LossBreakdown {
  torch::Tensor total;
  torch::Tensor l1;
  torch::Tensor perceptual;
  std::optional<torch::Tensor> prior;  // absent when distillation is disabled
};

struct TotalLossInputs {
  const torch::Tensor& pred;
  const torch::Tensor& gt;
  const FeaturePyramid* f_pri = nullptr;  // fused priors (or raw m without CLC)
  const FeaturePyramid* f_gt = nullptr;   // teacher pyramid on gt
  const torch::Tensor* phi_gt = nullptr;  // optional precomputed phi(gt)
};

// L1 + alpha * perceptual + beta * prior. The prior term is built only when
// the ablation enables distillation; the alpha term only when alpha > 0.
LossBreakdown total_loss(const TotalLossInputs& in, const FeatureFn& phi, const LossWeights& weights,
                         const trainkit::AblationConfig& ablation, const spl::HclOptions& hcl_options = {});

}  // namespace priorlens::losses
