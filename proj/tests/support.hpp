#pragma once

// Independent reference implementations used as test oracles. Everything here
// works on plain vectors of doubles with explicit loops so it shares no code
// path with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "priorlens/image.hpp"

namespace testing_support {

// Plane of doubles, row-major.
struct Plane {
  int h = 0;
  int w = 0;
  std::vector<double> v;
  Plane() = default;
  Plane(int h_, int w_, double fill = 0.0) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {}
  double& operator()(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  double operator()(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

inline Plane channel(const priorlens::Image& img, int c) {
  Plane p(img.height(), img.width());
  for (int y = 0; y < p.h; ++y)
    for (int x = 0; x < p.w; ++x) p(y, x) = img.at(c, y, x);
  return p;
}

// Mirror about the edge sample without repeating it: -1 -> 1, n -> n - 2.
inline int mirror(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

// out(y,x) = sum_{dy,dx} k(dy,dx) * in(y - dy + r, x - dx + r): true convolution.
inline Plane convolve_naive(const Plane& in, const std::vector<double>& k, int s) {
  const int r = s / 2;
  Plane out(in.h, in.w);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      double acc = 0.0;
      for (int ky = 0; ky < s; ++ky)
        for (int kx = 0; kx < s; ++kx)
          acc += k[static_cast<std::size_t>(ky) * s + kx] * in(mirror(y + r - ky, in.h), mirror(x + r - kx, in.w));
      out(y, x) = acc;
    }
  return out;
}

inline double psnr_oracle(const priorlens::Image& a, const priorlens::Image& b) {
  long double se = 0.0L;
  std::size_t n = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x) {
        const long double d = static_cast<long double>(a.at(c, y, x)) - b.at(c, y, x);
        se += d * d;
        ++n;
      }
  const long double mse = se / n;
  if (mse == 0.0L) return 100.0;
  return static_cast<double>(-10.0L * std::log10(mse));
}

// Direct (non-separable) windowed SSIM over every valid 11x11 window.
inline double ssim_oracle(const priorlens::Image& a, const priorlens::Image& b) {
  constexpr int kWin = 11;
  double g[kWin][kWin];
  double gsum = 0.0;
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) {
      const double di = i - 5;
      const double dj = j - 5;
      g[i][j] = std::exp(-(di * di + dj * dj) / (2 * 1.5 * 1.5));
      gsum += g[i][j];
    }
  for (auto& row : g)
    for (auto& v : row) v /= gsum;
  const double c1 = 1e-4;
  const double c2 = 9e-4;
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    const auto pa = channel(a, c);
    const auto pb = channel(b, c);
    double acc = 0.0;
    int count = 0;
    for (int y = 0; y + kWin <= pa.h; ++y)
      for (int x = 0; x + kWin <= pa.w; ++x) {
        double ma = 0, mb = 0;
        for (int i = 0; i < kWin; ++i)
          for (int j = 0; j < kWin; ++j) {
            ma += g[i][j] * pa(y + i, x + j);
            mb += g[i][j] * pb(y + i, x + j);
          }
        double va = 0, vb = 0, cov = 0;
        for (int i = 0; i < kWin; ++i)
          for (int j = 0; j < kWin; ++j) {
            const double da = pa(y + i, x + j) - ma;
            const double db = pb(y + i, x + j) - mb;
            va += g[i][j] * da * da;
            vb += g[i][j] * db * db;
            cov += g[i][j] * da * db;
          }
        acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
    total += acc / count;
  }
  return total / 3.0;
}

// [C][H][W] feature map of doubles.
struct Map {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;
  Map() = default;
  Map(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}
  double& operator()(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  double operator()(int ch, int y, int x) const { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
};

// Copies sample `n` of a [N,C,H,W] tensor.
inline Map to_map(const torch::Tensor& t, int n = 0) {
  const auto d = t.detach().to(torch::kFloat64).contiguous();
  Map m(static_cast<int>(d.size(1)), static_cast<int>(d.size(2)), static_cast<int>(d.size(3)));
  const auto acc = d.accessor<double, 4>();
  for (int c = 0; c < m.c; ++c)
    for (int y = 0; y < m.h; ++y)
      for (int x = 0; x < m.w; ++x) m(c, y, x) = acc[n][c][y][x];
  return m;
}

inline Map avg_pool_oracle(const Map& m, int k) {
  Map out(m.c, m.h / k, m.w / k);
  for (int c = 0; c < m.c; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        double s = 0;
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) s += m(c, y * k + i, x * k + j);
        out(c, y, x) = s / (k * k);
      }
  return out;
}

// Context-loss oracle for one sample: (1/(W H)) sum_k ||avg_k(a) - avg_k(b)||_F.
inline double hcl_oracle(const Map& a, const Map& b) {
  double total = 0.0;
  for (int k : {1, 2, 4}) {
    const auto pa = avg_pool_oracle(a, k);
    const auto pb = avg_pool_oracle(b, k);
    double s = 0;
    for (std::size_t i = 0; i < pa.v.size(); ++i) s += (pa.v[i] - pb.v[i]) * (pa.v[i] - pb.v[i]);
    total += std::sqrt(s);
  }
  return total / (a.h * a.w);
}

// Bilinear resize with half-pixel centers (align_corners = false).
inline Map bilinear_oracle(const Map& m, int oh, int ow) {
  Map out(m.c, oh, ow);
  const double sy = static_cast<double>(m.h) / oh;
  const double sx = static_cast<double>(m.w) / ow;
  for (int c = 0; c < m.c; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
        const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
        const int y0 = std::min(static_cast<int>(fy), m.h - 1);
        const int x0 = std::min(static_cast<int>(fx), m.w - 1);
        const int y1 = std::min(y0 + 1, m.h - 1);
        const int x1 = std::min(x0 + 1, m.w - 1);
        const double ly = fy - y0;
        const double lx = fx - x0;
        out(c, y, x) = (1 - ly) * ((1 - lx) * m(c, y0, x0) + lx * m(c, y0, x1)) +
                       ly * ((1 - lx) * m(c, y1, x0) + lx * m(c, y1, x1));
      }
  return out;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Max elementwise relative error between autograd and central differences of
// a scalar function over each input tensor (float64).
inline double gradient_check(const std::function<torch::Tensor(const std::vector<torch::Tensor>&)>& f,
                             std::vector<torch::Tensor> inputs, double h = 1e-6) {
  for (auto& t : inputs) t = t.detach().to(torch::kFloat64).clone().requires_grad_(true);
  const auto out = f(inputs);
  const auto grads = torch::autograd::grad({out}, inputs, {}, false, false, /*allow_unused=*/true);
  double worst = 0.0;
  torch::NoGradGuard guard;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto flat = inputs[t].view({-1});
    const auto analytic = grads[t].defined() ? grads[t].reshape({-1}) : torch::zeros_like(flat);
    for (int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + h;
      const double up = f(inputs).item<double>();
      flat[i] = orig - h;
      const double down = f(inputs).item<double>();
      flat[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[i].item<double>();
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

// Same, over the parameters of a module (float64) with fixed inputs.
inline double parameter_gradient_check(torch::nn::Module& module, const std::function<torch::Tensor()>& f,
                                       double h = 1e-6) {
  module.to(torch::kFloat64);
  module.zero_grad();
  const auto params = module.parameters();
  const auto out = f();
  const auto grads = torch::autograd::grad({out}, params, {}, false, false, true);
  double worst = 0.0;
  torch::NoGradGuard guard;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto flat = params[t].view({-1});
    const auto analytic = grads[t].defined() ? grads[t].reshape({-1}) : torch::zeros_like(flat);
    for (int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + h;
      const double up = f().item<double>();
      flat[i] = orig - h;
      const double down = f().item<double>();
      flat[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[i].item<double>();
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

inline priorlens::Image random_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  priorlens::Image img(h, w);
  for (auto& v : img.data()) v = u(rng);
  return img;
}

inline priorlens::Image checkerboard(int h, int w, int cell = 1) {
  priorlens::Image img(h, w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) img.at(c, y, x) = ((y / cell + x / cell) % 2) ? 1.0f : 0.0f;
  return img;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("priorlens_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support
