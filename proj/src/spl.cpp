#include "priorlens/spl.hpp"

#include <string>
#include <vector>

#include "priorlens/error.hpp"

namespace priorlens::spl {

namespace F = torch::nn::functional;

StudentNetImpl::StudentNetImpl(PyramidSpec spec, int refine_depth) {
  encoder_ = register_module("encoder", PyramidEncoder(spec, /*relu_outputs=*/false, refine_depth));
}

FeaturePyramid StudentNetImpl::forward(const torch::Tensor& blurry) {
  check_network_input(blurry);
  return encoder_->forward(blurry);
}

ClcImpl::ClcImpl(PyramidSpec spec) : spec_(spec) {
  for (int i = 0; i < 2; ++i) {
    const auto tag = std::to_string(i + 1);
    proj_[i] = register_module("proj" + tag, conv1x1(spec[i + 1], spec[i]));
    att_[i] = register_module("att" + tag, conv3x3(2 * spec[i], spec[i]));
  }
}

torch::Tensor ClcImpl::deep_term(const FeaturePyramid& m, int level_index) {
  return resize_like(proj_.at(level_index)->forward(m[level_index + 1]), m[level_index]);
}

torch::Tensor ClcImpl::attention(const FeaturePyramid& m, int level_index) {
  return torch::sigmoid(att_.at(level_index)->forward(torch::cat({m[level_index], deep_term(m, level_index)}, 1)));
}

FeaturePyramid ClcImpl::forward(const FeaturePyramid& m) {
  m.validate(&spec_, /*check_finite=*/false);
  FeaturePyramid out;
  for (int i = 0; i < 2; ++i) {
    const auto deep = deep_term(m, i);
    const auto a = torch::sigmoid(att_[i]->forward(torch::cat({m[i], deep}, 1)));
    out[i] = a * m[i] + a * deep;
  }
  out[2] = m[2];
  return out;
}

namespace {

torch::Tensor as_batch(const torch::Tensor& t) {
  if (t.dim() == 3) return t.unsqueeze(0);
  if (t.dim() == 4) return t;
  throw ValidationError("feature maps must be [C,H,W] or [N,C,H,W]");
}

}  // namespace

torch::Tensor hcl_sum(const torch::Tensor& a_in, const torch::Tensor& b_in, const HclOptions& options) {
  if (a_in.sizes() != b_in.sizes()) throw ValidationError("hcl: feature map shapes differ");
  const auto a = as_batch(a_in);
  const auto b = as_batch(b_in);
  const auto min_dim = std::min(a.size(2), a.size(3));
  if (min_dim < 4 && !options.allow_small_maps)
    throw ValidationError("hcl: spatial dims must be >= 4 for the factor-4 pooling");

  torch::Tensor total;
  int used = 0;
  for (const std::int64_t k : {1, 2, 4}) {
    if (k > min_dim) continue;
    const auto pa = k == 1 ? a : F::avg_pool2d(a, F::AvgPool2dFuncOptions(k));
    const auto pb = k == 1 ? b : F::avg_pool2d(b, F::AvgPool2dFuncOptions(k));
    const auto d = (pa - pb).flatten(1);
    const auto term = options.mode == DistanceMode::kNorm ? torch::linalg_vector_norm(d, 2, {1})
                                                          : d.pow(2).mean(1);
    total = total.defined() ? total + term : term;
    ++used;
  }
  if (used < 3) total = total * (3.0 / used);
  return total.mean();
}

torch::Tensor hcl(const torch::Tensor& a, const torch::Tensor& b, const HclOptions& options) {
  const auto s = hcl_sum(a, b, options);
  if (options.mode == DistanceMode::kMse) return s;
  return s / static_cast<double>(a.size(-1) * a.size(-2));
}

torch::Tensor prior_loss(const FeaturePyramid& f_pri, const FeaturePyramid& f_gt, const HclOptions& options) {
  f_pri.check_compatible(f_gt);
  torch::Tensor total;
  for (int i = 0; i < kLevels; ++i) {
    const auto term = hcl(f_pri[i], f_gt[i], options);
    total = total.defined() ? total + term : term;
  }
  return total / static_cast<double>(kLevels);
}

torch::Tensor plain_prior_loss(const FeaturePyramid& m, const FeaturePyramid& f_gt, const HclOptions& options) {
  return prior_loss(m, f_gt, options);
}

}  // namespace priorlens::spl
