#include "priorlens/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <string>

#include <torch/torch.h>

#include "priorlens/error.hpp"

namespace priorlens {

Image::Image(int height, int width, float fill)
    : height_(height), width_(width),
      pixels_(static_cast<std::size_t>(kChannels) * height * width, fill) {
  if (height <= 0 || width <= 0) throw ValidationError("image dimensions must be positive");
}

Image::Image(int height, int width, std::vector<float> planar)
    : height_(height), width_(width), pixels_(std::move(planar)) {
  if (height <= 0 || width <= 0) throw ValidationError("image dimensions must be positive");
  if (pixels_.size() != static_cast<std::size_t>(kChannels) * height * width)
    throw ValidationError("pixel buffer size does not match 3 x H x W");
}

void Image::clamp01() {
  for (auto& v : pixels_) v = std::clamp(v, 0.0f, 1.0f);
}

double Image::mean() const {
  if (pixels_.empty()) return 0.0;
  double acc = std::accumulate(pixels_.begin(), pixels_.end(), 0.0);
  return acc / static_cast<double>(pixels_.size());
}

Image Image::crop(int y0, int x0, int h, int w) const {
  if (y0 < 0 || x0 < 0 || h <= 0 || w <= 0 || y0 + h > height_ || x0 + w > width_)
    throw ValidationError("crop window outside image");
  Image out(h, w);
  for (int c = 0; c < kChannels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = at(c, y0 + y, x0 + x);
  return out;
}

Image Image::flipped_horizontal() const {
  Image out(height_, width_);
  for (int c = 0; c < kChannels; ++c)
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x) out.at(c, y, x) = at(c, y, width_ - 1 - x);
  return out;
}

at::Tensor to_tensor(const Image& img) {
  auto t = torch::empty({Image::kChannels, img.height(), img.width()}, torch::kFloat32);
  std::copy(img.data().begin(), img.data().end(), t.data_ptr<float>());
  return t;
}

at::Tensor to_batch(std::span<const Image> images) {
  if (images.empty()) throw ValidationError("empty image batch");
  std::vector<torch::Tensor> parts;
  parts.reserve(images.size());
  for (const auto& img : images) {
    if (img.height() != images.front().height() || img.width() != images.front().width())
      throw ValidationError("batch images differ in size");
    parts.push_back(to_tensor(img));
  }
  return torch::stack(parts);
}

Image from_tensor(const at::Tensor& chw) {
  auto t = chw.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  if (t.dim() == 4 && t.size(0) == 1) t = t.squeeze(0);
  if (t.dim() != 3 || t.size(0) != Image::kChannels)
    throw ValidationError("expected a [3,H,W] tensor");
  const auto* p = t.data_ptr<float>();
  std::vector<float> planar(p, p + t.numel());
  return Image(static_cast<int>(t.size(1)), static_cast<int>(t.size(2)), std::move(planar));
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::floor(c * 255.0f + 0.5f));
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ValidationError("cannot open image: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw RuntimeFailure("libpng initialisation failed");
  }
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("not a readable PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * h);
  rows.resize(h);
  for (int y = 0; y < h; ++y) rows[y] = buffer.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = buffer[y * stride + x * 3 + c] / 255.0f;
  return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw RuntimeFailure("cannot write image: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw RuntimeFailure("libpng initialisation failed");
  }
  const int h = img.height();
  const int w = img.width();
  std::vector<std::uint8_t> buffer(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) buffer[(y * w + x) * 3 + c] = to_byte(img.at(c, y, x));
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * w * 3;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw RuntimeFailure("PNG encoding failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image quantize8(const Image& img) {
  Image out = img;
  for (auto& v : out.data()) v = to_byte(v) / 255.0f;
  return out;
}

}  // namespace priorlens
