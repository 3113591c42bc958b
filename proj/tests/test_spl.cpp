#include "doctest_torch.hpp"

#include "priorlens/error.hpp"
#include "priorlens/spl.hpp"
#include "support.hpp"

using namespace priorlens;
using namespace priorlens::spl;
namespace ts = testing_support;

namespace {

torch::TensorOptions f64() { return torch::TensorOptions().dtype(torch::kFloat64); }

FeaturePyramid random_pyramid(std::int64_t n, std::array<std::int64_t, 3> ch, std::int64_t size) {
  FeaturePyramid p;
  for (int i = 0; i < kLevels; ++i) p[i] = torch::randn({n, ch[i], size >> i, size >> i}, f64());
  return p;
}

// Batch-mean oracle for prior_loss.
double prior_loss_oracle(const FeaturePyramid& a, const FeaturePyramid& b) {
  const auto n = a[0].size(0);
  double total = 0.0;
  for (int s = 0; s < n; ++s)
    for (int i = 0; i < kLevels; ++i)
      total += ts::hcl_oracle(ts::to_map(a[i], s), ts::to_map(b[i], s));
  return total / (3.0 * n);
}

// Attention forced to one and deep term forced to zero.
void bypass(Clc& clc) {
  torch::NoGradGuard guard;
  for (int i = 0; i < 2; ++i) {
    zero_parameters(*clc->projection(i));
    clc->attention_conv(i)->weight.zero_();
    clc->attention_conv(i)->bias.fill_(40.0);
  }
}

}  // namespace

TEST_CASE("context loss on all-ones vs zeros is 7/16") {
  const auto a = torch::ones({1, 4, 4}, f64());
  const auto b = torch::zeros({1, 4, 4}, f64());
  CHECK(hcl(a, b).item<double>() == doctest::Approx(7.0 / 16.0).epsilon(1e-12));
  CHECK(hcl_sum(a, b).item<double>() == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("context loss matches the loop oracle on random maps") {
  torch::manual_seed(1);
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = torch::randn({1, 3, 8, 12}, f64());
    const auto b = torch::randn({1, 3, 8, 12}, f64());
    CHECK(hcl(a, b).item<double>() == doctest::Approx(ts::hcl_oracle(ts::to_map(a), ts::to_map(b))).epsilon(1e-10));
  }
}

TEST_CASE("mse mode sums the mean squared pooled differences") {
  const auto a = torch::randn({1, 2, 4, 4}, f64());
  const auto b = torch::randn({1, 2, 4, 4}, f64());
  const auto ma = ts::to_map(a);
  const auto mb = ts::to_map(b);
  double expected = 0.0;
  for (int k : {1, 2, 4}) {
    const auto pa = ts::avg_pool_oracle(ma, k);
    const auto pb = ts::avg_pool_oracle(mb, k);
    double s = 0.0;
    for (std::size_t i = 0; i < pa.v.size(); ++i) s += (pa.v[i] - pb.v[i]) * (pa.v[i] - pb.v[i]);
    expected += s / pa.v.size();
  }
  CHECK(hcl(a, b, {DistanceMode::kMse}).item<double>() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("context loss errors and small-map rescaling") {
  CHECK_THROWS_AS(hcl(torch::zeros({1, 4, 4}), torch::zeros({1, 4, 5})), ValidationError);
  CHECK_THROWS_AS(hcl(torch::zeros({1, 2, 2}), torch::zeros({1, 2, 2})), ValidationError);
  HclOptions small;
  small.allow_small_maps = true;
  // 2x2 maps of ones vs zeros: factors 1 and 2 give 2 + 1, rescaled by 3/2.
  const auto v = hcl_sum(torch::ones({1, 2, 2}, f64()), torch::zeros({1, 2, 2}, f64()), small);
  CHECK(v.item<double>() == doctest::Approx(4.5).epsilon(1e-12));
}

TEST_CASE("property: context loss is nonnegative, symmetric and zero only on equal inputs") {
  torch::manual_seed(2);
  for (int trial = 0; trial < 25; ++trial) {
    const auto a = torch::randn({2, 3, 8, 8}, f64());
    const auto b = a + 0.1 * torch::randn({2, 3, 8, 8}, f64());
    const double ab = hcl(a, b).item<double>();
    CHECK(ab > 0.0);
    CHECK(ab == hcl(b, a).item<double>());
    CHECK(hcl(a, a).item<double>() == 0.0);
  }
}

TEST_CASE("prior loss matches the scripted oracle and decomposes per level") {
  torch::manual_seed(3);
  const auto a = random_pyramid(2, {3, 4, 5}, 16);
  const auto b = random_pyramid(2, {3, 4, 5}, 16);
  CHECK(prior_loss(a, b).item<double>() == doctest::Approx(prior_loss_oracle(a, b)).epsilon(1e-9));
  CHECK(plain_prior_loss(a, b).item<double>() == doctest::Approx(prior_loss_oracle(a, b)).epsilon(1e-9));
  CHECK(prior_loss(a, a).item<double>() == 0.0);

  auto c = a;
  c[2] = b[2];
  const double expected = hcl_sum(a[2], b[2]).item<double>() / (3.0 * 4 * 4);
  CHECK(prior_loss(a, c).item<double>() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("prior loss rejects mismatched pyramids") {
  const auto a = random_pyramid(1, {3, 4, 5}, 16);
  const auto b = random_pyramid(1, {3, 4, 6}, 16);
  CHECK_THROWS_AS(prior_loss(a, b), ValidationError);
  CHECK_THROWS_AS(prior_loss(a, random_pyramid(1, {3, 4, 5}, 32)), ValidationError);
}

TEST_CASE("student pyramid shapes, finiteness and trainability") {
  StudentNet student;
  const auto m = student->forward(torch::rand({1, 3, 64, 64}));
  CHECK(m[0].sizes() == torch::IntArrayRef({1, 32, 32, 32}));
  CHECK(m[1].sizes() == torch::IntArrayRef({1, 64, 16, 16}));
  CHECK(m[2].sizes() == torch::IntArrayRef({1, 128, 8, 8}));
  const auto z = student->forward(torch::zeros({1, 3, 32, 32}));
  for (int i = 0; i < kLevels; ++i) CHECK(torch::isfinite(z[i]).all().item<bool>());
  CHECK_THROWS_AS(student->forward(torch::rand({1, 3, 30, 32})), ValidationError);

  student->zero_grad();
  m[0].sum().backward();
  double g = 0.0;
  for (const auto& p : student->parameters())
    if (p.grad().defined()) g += p.grad().abs().sum().item<double>();
  CHECK(g > 0.0);
}

TEST_CASE("cross-level fusion keeps the deepest level bitwise") {
  torch::manual_seed(4);
  Clc clc;
  StudentNet student;
  for (int trial = 0; trial < 5; ++trial) {
    const auto m = student->forward(torch::rand({2, 3, 32, 40}));
    const auto f = clc->forward(m);
    CHECK(torch::equal(f[2], m[2]));
    CHECK(f[0].sizes() == m[0].sizes());
    CHECK(f[1].sizes() == m[1].sizes());
  }
}

TEST_CASE("fusion with unit attention and zero deep term is the identity") {
  Clc clc;
  bypass(clc);
  const auto m = random_pyramid(1, {32, 64, 128}, 16);
  FeaturePyramid mf;
  for (int i = 0; i < kLevels; ++i) mf[i] = m[i].to(torch::kFloat32);
  const auto f = clc->forward(mf);
  for (int i = 0; i < kLevels; ++i) CHECK(torch::equal(f[i], mf[i]));

  const auto gt = random_pyramid(1, {32, 64, 128}, 16);
  FeaturePyramid gtf;
  for (int i = 0; i < kLevels; ++i) gtf[i] = gt[i].to(torch::kFloat32);
  CHECK(prior_loss(f, gtf).item<double>() == plain_prior_loss(mf, gtf).item<double>());
}

TEST_CASE("fusion matches a hand-built two-channel example") {
  const PyramidSpec spec{{2, 2, 2}};
  Clc clc(spec);
  clc->to(torch::kFloat64);
  // Projection: deep channel 0 = 0.5 m2_0 + 0.25 m2_1 + 0.1, channel 1 = m2_1 - 0.2.
  const double P[2][2] = {{0.5, 0.25}, {0.0, 1.0}};
  const double pb[2] = {0.1, -0.2};
  // Attention uses only the center tap over cat(m1, deep).
  const double W[2][4] = {{0.3, -0.2, 0.5, 0.1}, {-0.4, 0.2, 0.0, 0.6}};
  const double ab[2] = {0.05, -0.1};
  {
    torch::NoGradGuard guard;
    for (int i = 0; i < 2; ++i) {
      zero_parameters(*clc->projection(i));
      zero_parameters(*clc->attention_conv(i));
    }
    auto& proj = clc->projection(0);
    auto& att = clc->attention_conv(0);
    for (int o = 0; o < 2; ++o) {
      for (int c = 0; c < 2; ++c) proj->weight[o][c][0][0] = P[o][c];
      proj->bias[o] = pb[o];
      for (int c = 0; c < 4; ++c) att->weight[o][c][1][1] = W[o][c];
      att->bias[o] = ab[o];
    }
  }
  torch::manual_seed(5);
  FeaturePyramid m;
  m[0] = torch::randn({1, 2, 4, 4}, f64());
  m[1] = torch::randn({1, 2, 2, 2}, f64());
  m[2] = torch::randn({1, 2, 1, 1}, f64());
  const auto f = ts::to_map(clc->forward(m)[0]);

  const auto m1 = ts::to_map(m[0]);
  const auto m2 = ts::to_map(m[1]);
  ts::Map projected(2, 2, 2);
  for (int o = 0; o < 2; ++o)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) projected(o, y, x) = P[o][0] * m2(0, y, x) + P[o][1] * m2(1, y, x) + pb[o];
  const auto deep = ts::bilinear_oracle(projected, 4, 4);
  for (int o = 0; o < 2; ++o)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        const double z = W[o][0] * m1(0, y, x) + W[o][1] * m1(1, y, x) + W[o][2] * deep(0, y, x) +
                         W[o][3] * deep(1, y, x) + ab[o];
        const double a = ts::sigmoid(z);
        CHECK(f(o, y, x) == doctest::Approx(a * m1(o, y, x) + a * deep(o, y, x)).epsilon(1e-12));
      }
}

TEST_CASE("gradient checks: context loss, prior loss, fusion") {
  torch::manual_seed(6);
  const auto a = torch::randn({1, 2, 4, 4}, f64());
  const auto b = torch::randn({1, 2, 4, 4}, f64());
  CHECK(ts::gradient_check([](const auto& in) { return hcl(in[0], in[1]); }, {a, b}) < 1e-3);
  CHECK(ts::gradient_check([](const auto& in) { return hcl(in[0], in[1], {DistanceMode::kMse}); }, {a, b}) < 1e-3);

  HclOptions small;
  small.allow_small_maps = true;
  const auto p = random_pyramid(1, {2, 2, 2}, 4);
  const auto q = random_pyramid(1, {2, 2, 2}, 4);
  const auto pl = [&](const std::vector<torch::Tensor>& in) {
    return prior_loss({{in[0], in[1], in[2]}}, {{in[3], in[4], in[5]}}, small);
  };
  CHECK(ts::gradient_check(pl, {p[0], p[1], p[2], q[0], q[1], q[2]}) < 1e-3);

  Clc clc(PyramidSpec{{2, 2, 2}});
  clc->to(torch::kFloat64);
  const auto r0 = torch::randn({1, 2, 4, 4}, f64());
  const auto r1 = torch::randn({1, 2, 2, 2}, f64());
  const auto fuse = [&](const std::vector<torch::Tensor>& in) {
    const auto f = clc->forward({{in[0], in[1], in[2]}});
    return (f[0] * r0).sum() + (f[1] * r1).sum() + f[2].sum();
  };
  CHECK(ts::gradient_check(fuse, {p[0], p[1], p[2]}) < 1e-3);
  const FeaturePyramid fixed = p;
  CHECK(ts::parameter_gradient_check(*clc, [&] { return fuse({fixed[0], fixed[1], fixed[2]}); }) < 1e-3);
}
