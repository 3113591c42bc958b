#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace at {
class Tensor;
}

namespace priorlens {

// RGB image with planar float storage in [0,1]: channel c, row y, column x
// lives at index (c * height + y) * width + x.
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int height, int width, float fill = 0.0f);
  Image(int height, int width, std::vector<float> planar);

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return pixels_.empty(); }
  std::size_t size() const { return pixels_.size(); }

  float& at(int c, int y, int x) { return pixels_[index(c, y, x)]; }
  float at(int c, int y, int x) const { return pixels_[index(c, y, x)]; }

  std::span<float> data() { return pixels_; }
  std::span<const float> data() const { return pixels_; }

  void clamp01();
  double mean() const;

  // Crop [y0, y0+h) x [x0, x0+w).
  Image crop(int y0, int x0, int h, int w) const;
  Image flipped_horizontal() const;

  bool operator==(const Image& other) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

// Tensor bridges. Tensors are float32 [3,H,W] (single) or [N,3,H,W] (batch).
at::Tensor to_tensor(const Image& img);
at::Tensor to_batch(std::span<const Image> images);
Image from_tensor(const at::Tensor& chw);

// 8-bit RGB PNG. Reading drops alpha and expands gray; writing quantizes
// with round-half-up after clamping to [0,1].
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);

// Quantize to 8 bits and back, the exact round-trip a PNG write/read applies.
Image quantize8(const Image& img);

}  // namespace priorlens
