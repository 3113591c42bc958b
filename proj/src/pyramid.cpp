#include "priorlens/pyramid.hpp"

#include <string>

#include "priorlens/error.hpp"

namespace priorlens {

namespace F = torch::nn::functional;

void FeaturePyramid::validate(const PyramidSpec* spec, bool check_finite) const {
  for (int i = 0; i < kLevels; ++i) {
    const auto& t = levels[i];
    const std::string name = "pyramid level " + std::to_string(i + 1);
    if (!t.defined()) throw ValidationError(name + " is undefined");
    if (t.dim() != 4) throw ValidationError(name + " must be [N,C,H,W]");
    if (spec && t.size(1) != (*spec)[i])
      throw ValidationError(name + " has " + std::to_string(t.size(1)) + " channels, expected " +
                            std::to_string((*spec)[i]));
    if (i > 0) {
      const auto& prev = levels[i - 1];
      if (t.size(0) != prev.size(0)) throw ValidationError(name + " batch size differs");
      if (prev.size(2) != 2 * t.size(2) || prev.size(3) != 2 * t.size(3))
        throw ValidationError(name + " spatial dims do not halve the previous level");
    }
    if (check_finite && !torch::isfinite(t).all().item<bool>()) throw ValidationError(name + " has non-finite values");
  }
}

void FeaturePyramid::check_compatible(const FeaturePyramid& other) const {
  for (int i = 0; i < kLevels; ++i) {
    if (!levels[i].defined() || !other.levels[i].defined() || levels[i].sizes() != other.levels[i].sizes())
      throw ValidationError("pyramid shapes differ at level " + std::to_string(i + 1));
  }
}

FeaturePyramid FeaturePyramid::detach() const {
  FeaturePyramid out;
  for (int i = 0; i < kLevels; ++i) out.levels[i] = levels[i].detach();
  return out;
}

void check_network_input(const torch::Tensor& images) {
  if (!images.defined() || images.dim() != 4 || images.size(1) != 3)
    throw ValidationError("network input must be a [N,3,H,W] batch");
  if (images.size(2) % kStrideMultiple != 0 || images.size(3) % kStrideMultiple != 0)
    throw ValidationError("image height and width must be divisible by 8, got " +
                          std::to_string(images.size(2)) + "x" + std::to_string(images.size(3)));
}

torch::Tensor resize_like(const torch::Tensor& x, const torch::Tensor& like) {
  if (x.size(-2) == like.size(-2) && x.size(-1) == like.size(-1)) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{like.size(-2), like.size(-1)})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

torch::nn::Conv2d conv3x3(std::int64_t in, std::int64_t out, std::int64_t stride) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::Conv2d conv1x1(std::int64_t in, std::int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1));
}

void zero_parameters(torch::nn::Module& m) {
  torch::NoGradGuard guard;
  for (auto& p : m.parameters()) p.zero_();
}

PyramidEncoderImpl::PyramidEncoderImpl(PyramidSpec spec, bool relu_outputs, int refine_depth)
    : spec_(spec), relu_outputs_(relu_outputs) {
  if (refine_depth < 1) throw ValidationError("pyramid encoder: refine depth must be >= 1");
  std::int64_t in = 3;
  for (int i = 0; i < kLevels; ++i) {
    const auto tag = std::to_string(i + 1);
    down_[i] = register_module("down" + tag, conv3x3(in, spec[i], 2));
    // Extra refine convs get a letter suffix so depth-1 names stay stable.
    for (int d = 0; d < refine_depth; ++d) {
      const auto name = "refine" + tag + (d == 0 ? std::string() : std::string(1, static_cast<char>('a' + d)));
      refine_[i].push_back(register_module(name, conv3x3(spec[i], spec[i])));
    }
    in = spec[i];
  }
}

FeaturePyramid PyramidEncoderImpl::forward(const torch::Tensor& x) {
  FeaturePyramid out;
  torch::Tensor h = x;
  for (int i = 0; i < kLevels; ++i) {
    h = torch::relu(down_[i]->forward(h));
    for (std::size_t d = 0; d < refine_[i].size(); ++d) h = refine_[i][d]->forward(d == 0 ? h : torch::relu(h));
    out.levels[i] = relu_outputs_ ? torch::relu(h) : h;
    h = torch::relu(h);
  }
  return out;
}

}  // namespace priorlens
