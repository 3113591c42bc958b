#include "priorlens/losses.hpp"

#include <optional>

#include "priorlens/error.hpp"

namespace priorlens::losses {

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ValidationError("loss weights alpha and beta must be >= 0");
}

namespace {

torch::Tensor as_batch(const torch::Tensor& t) { return t.dim() == 3 ? t.unsqueeze(0) : t; }

void check_same(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) throw ValidationError(std::string(what) + ": shapes differ");
  if (a.dim() != 3 && a.dim() != 4) throw ValidationError(std::string(what) + ": expected [C,H,W] or [N,C,H,W]");
}

}  // namespace

torch::Tensor l1_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
  check_same(pred, gt, "l1_loss");
  const auto p = as_batch(pred);
  const auto g = as_batch(gt);
  const double hw = static_cast<double>(p.size(2) * p.size(3));
  return (g - p).abs().sum() / (hw * static_cast<double>(p.size(0)));
}

torch::Tensor perceptual_from_features(const torch::Tensor& phi_pred, const torch::Tensor& phi_gt) {
  check_same(phi_pred, phi_gt, "perceptual_loss");
  const auto a = as_batch(phi_gt);
  const auto b = as_batch(phi_pred);
  const double norm = static_cast<double>(a.size(1) * a.size(2) * a.size(3));
  return torch::linalg_vector_norm((a - b).flatten(1), 2, {1}).mean() / norm;
}

torch::Tensor perceptual_loss(const torch::Tensor& pred, const torch::Tensor& gt, const FeatureFn& phi) {
  check_same(pred, gt, "perceptual_loss");
  const auto p = as_batch(pred);
  const auto g = as_batch(gt);
  return perceptual_from_features(phi(p), phi(g));
}

LossBreakdown total_loss(const TotalLossInputs& in, const FeatureFn& phi, const LossWeights& weights,
                         const trainkit::AblationConfig& ablation, const spl::HclOptions& hcl_options) {
  weights.validate();
  check_same(in.pred, in.gt, "total_loss");
  LossBreakdown out;
  out.l1 = losses::l1_loss(in.pred, in.gt);
  out.total = out.l1;

  {
    // Without an alpha weight the term is still reported, just kept off the graph.
    std::optional<torch::NoGradGuard> detached;
    if (weights.alpha == 0.0) detached.emplace();
    torch::Tensor phi_gt;
    if (in.phi_gt) {
      phi_gt = in.phi_gt->detach();
    } else {
      torch::NoGradGuard guard;
      phi_gt = phi(as_batch(in.gt));
    }
    out.perceptual = perceptual_from_features(phi(as_batch(in.pred)), phi_gt);
  }
  if (weights.alpha > 0.0) out.total = out.total + weights.alpha * out.perceptual;

  if (ablation.use_hcl) {
    if (!in.f_pri || !in.f_gt) throw ValidationError("total_loss: distillation enabled but pyramids missing");
    out.prior = spl::prior_loss(*in.f_pri, *in.f_gt, hcl_options);
    if (weights.beta > 0.0) out.total = out.total + weights.beta * *out.prior;
  }
  return out;
}

}  // namespace priorlens::losses
