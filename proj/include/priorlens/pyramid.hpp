#pragma once

#include <array>
#include <vector>
#include <cstdint>

#include <torch/torch.h>

namespace priorlens {

inline constexpr int kLevels = 3;
// Total downsampling of the deepest level; network inputs must divide by it.
inline constexpr int kStrideMultiple = 8;

// Channel widths of pyramid levels 1..3 (strides 2, 4, 8).
struct PyramidSpec {
  std::array<std::int64_t, kLevels> channels{32, 64, 128};

  std::int64_t operator[](int level_index) const { return channels[level_index]; }
  std::int64_t total_channels() const { return channels[0] + channels[1] + channels[2]; }
  bool operator==(const PyramidSpec&) const = default;
};

// Ordered batch feature maps [N, C_i, H/2^i, W/2^i], index 0 = level 1.
struct FeaturePyramid {
  std::array<torch::Tensor, kLevels> levels;

  const torch::Tensor& operator[](int i) const { return levels[i]; }
  torch::Tensor& operator[](int i) { return levels[i]; }

  // Throws ValidationError on wrong rank, batch mismatch, non-halving spatial
  // dims, channel mismatch with `spec` (when given) or non-finite values.
  void validate(const PyramidSpec* spec = nullptr, bool check_finite = true) const;
  void check_compatible(const FeaturePyramid& other) const;
  FeaturePyramid detach() const;
};

// Validates a [N,3,H,W] batch whose spatial dims divide by kStrideMultiple.
void check_network_input(const torch::Tensor& images);

// Bilinear resize (align_corners = false) to the spatial size of `like`.
torch::Tensor resize_like(const torch::Tensor& x, const torch::Tensor& like);

// Three stride-2 stages of (conv3x3 stride 2, ReLU, conv3x3 [, ReLU, conv3x3
// ...] with `refine_depth` refine convs). Stage outputs form the pyramid; ReLU
// is applied before each following stage and, when `relu_outputs` is set, to
// the reported level features as well.
class PyramidEncoderImpl : public torch::nn::Module {
 public:
  PyramidEncoderImpl(PyramidSpec spec, bool relu_outputs, int refine_depth = 1);
  FeaturePyramid forward(const torch::Tensor& x);
  const PyramidSpec& spec() const { return spec_; }

 private:
  PyramidSpec spec_;
  bool relu_outputs_;
  std::array<torch::nn::Conv2d, kLevels> down_{nullptr, nullptr, nullptr};
  std::array<std::vector<torch::nn::Conv2d>, kLevels> refine_;
};
TORCH_MODULE(PyramidEncoder);

torch::nn::Conv2d conv3x3(std::int64_t in, std::int64_t out, std::int64_t stride = 1);
torch::nn::Conv2d conv1x1(std::int64_t in, std::int64_t out);

// Sets every parameter of `m` to zero.
void zero_parameters(torch::nn::Module& m);

}  // namespace priorlens
