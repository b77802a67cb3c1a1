#include <gtest/gtest.h>
#include <omp.h>

#include <cmath>
#include <functional>

#include "moldgan/nnet/networks.hpp"
#include "support/oracles.hpp"

using namespace moldgan;
using namespace moldgan::nnet;
using namespace moldgan::oracle;

namespace {

using TensorD = Tensor<double>;

TensorD random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

double dot(const TensorD& a, const TensorD& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

struct ThreadCount {
  int saved = omp_get_max_threads();
  explicit ThreadCount(int n) { omp_set_num_threads(n); }
  ~ThreadCount() { omp_set_num_threads(saved); }
};

}  // namespace

TEST(Conv, OneByOneIdentity) {
  Rng rng(1);
  const auto x = random_tensor({1, 5, 7}, rng);
  const TensorD w({1, 1, 1, 1}, 1.0);
  EXPECT_EQ(conv2d_forward(x, w, TensorD{}, 1, 0), x);
}

TEST(Conv, AllOnesHandComputed) {
  const TensorD w({1, 1, 4, 4}, 1.0);
  // 4x4 input: every 4x4 window at stride 2 with one row/column of padding covers 3x3 real pixels.
  const auto small = conv2d_forward(TensorD({1, 4, 4}, 1.0), w, TensorD{}, 2, 1);
  EXPECT_EQ(small.shape, (std::vector<int>{1, 2, 2}));
  for (double v : small.data) EXPECT_EQ(v, 9.0);
  // 6x6 input: corners 3x3, edges 3x4, centre 4x4.
  const auto big = conv2d_forward(TensorD({1, 6, 6}, 1.0), w, TensorD{}, 2, 1);
  EXPECT_EQ(big.shape, (std::vector<int>{1, 3, 3}));
  EXPECT_EQ(big(0, 0, 0), 9.0);
  EXPECT_EQ(big(0, 0, 1), 12.0);
  EXPECT_EQ(big(0, 1, 0), 12.0);
  EXPECT_EQ(big(0, 1, 1), 16.0);
  EXPECT_EQ(big(0, 2, 2), 9.0);
}

TEST(Conv, BiasAndShapeErrors) {
  const TensorD b({2}, 0.5);
  const auto y = conv2d_forward(TensorD({1, 4, 4}), TensorD({2, 1, 4, 4}, 1.0), b, 2, 1);
  for (double v : y.data) EXPECT_EQ(v, 0.5);
  EXPECT_THROW(conv2d_forward(TensorD({2, 4, 4}), TensorD({2, 1, 4, 4}), b, 2, 1), Error);
  EXPECT_THROW(conv2d_forward(TensorD({1, 4, 4}), TensorD({2, 1, 4, 4}), TensorD({3}), 2, 1), Error);
}

TEST(Conv, GradientCheck) {
  Rng rng(2);
  auto x = random_tensor({2, 6, 6}, rng);
  auto w = random_tensor({3, 2, 4, 4}, rng);
  auto b = random_tensor({3}, rng);
  const auto r = random_tensor({3, 3, 3}, rng);
  const auto loss = [&] { return dot(conv2d_forward(x, w, b, 2, 1), r); };
  const auto g = conv2d_backward(x, w, r, 2, 1);
  EXPECT_LT(max_rel(g.input, numeric_grad(x, loss)), 1e-4);
  EXPECT_LT(max_rel(g.weight, numeric_grad(w, loss)), 1e-4);
  EXPECT_LT(max_rel(g.bias, numeric_grad(b, loss)), 1e-4);
}

TEST(Deconv, SingleSiteScatter) {
  Rng rng(3);
  const auto w = random_tensor({1, 1, 4, 4}, rng);
  const TensorD x({1, 1, 1}, 1.0);
  const auto full = deconv2d_forward(x, w, TensorD{}, 1, 0);
  EXPECT_EQ(full.shape, (std::vector<int>{1, 4, 4}));
  EXPECT_EQ(full.data, w.data);
  const auto cropped = deconv2d_forward(x, w, TensorD{}, 2, 1);
  EXPECT_EQ(cropped.shape, (std::vector<int>{1, 2, 2}));
  for (int y = 0; y < 2; ++y)
    for (int xx = 0; xx < 2; ++xx) EXPECT_EQ(cropped(0, y, xx), w.data[(y + 1) * 4 + xx + 1]);
}

TEST(Deconv, AdjointOfConv) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const auto x = random_tensor({3, 8, 8}, rng);
    const auto w = random_tensor({4, 3, 4, 4}, rng);
    const auto y = random_tensor({4, 4, 4}, rng);
    const double lhs = dot(conv2d_forward(x, w, TensorD{}, 2, 1), y);
    const double rhs = dot(x, deconv2d_forward(y, w, TensorD{}, 2, 1));
    EXPECT_NEAR(lhs, rhs, 1e-9);
  }
}

TEST(Deconv, DoublesSizeAndGradientCheck) {
  Rng rng(5);
  auto x = random_tensor({3, 4, 4}, rng);
  auto w = random_tensor({3, 2, 4, 4}, rng);
  auto b = random_tensor({2}, rng);
  const auto r = random_tensor({2, 8, 8}, rng);
  EXPECT_EQ(deconv2d_forward(x, w, b, 2, 1).shape, r.shape);
  const auto loss = [&] { return dot(deconv2d_forward(x, w, b, 2, 1), r); };
  const auto g = deconv2d_backward(x, w, r, 2, 1);
  EXPECT_LT(max_rel(g.input, numeric_grad(x, loss)), 1e-4);
  EXPECT_LT(max_rel(g.weight, numeric_grad(w, loss)), 1e-4);
  EXPECT_LT(max_rel(g.bias, numeric_grad(b, loss)), 1e-4);
}

TEST(Activations, Examples) {
  const TensorD x({1, 1, 3}, 0.0);
  TensorD v = x;
  v.data = {-1.0, 0.0, 2.5};
  EXPECT_EQ(leaky_relu(v).data, (std::vector<double>{-0.2, 0.0, 2.5}));
  EXPECT_EQ(relu(v).data, (std::vector<double>{0.0, 0.0, 2.5}));
  EXPECT_EQ(tanh_out(x).data, x.data);
  EXPECT_EQ(sigmoid(x).data, (std::vector<double>{0.5, 0.5, 0.5}));
  TensorD big = x;
  big.data = {-50.0, 50.0, 1e3};
  for (double t : tanh_out(big).data) EXPECT_LE(std::abs(t), 1.0);
}

TEST(Activations, GradientsAwayFromKink) {
  using Fwd = TensorD (*)(const TensorD&);
  const auto leaky = [](const TensorD& t) { return leaky_relu(t); };
  const auto leaky_b = [](const TensorD& y, const TensorD& g) { return leaky_relu_backward(y, g); };
  const std::vector<std::pair<Fwd, TensorD (*)(const TensorD&, const TensorD&)>> ops = {
      {+leaky, +leaky_b},
      {&relu<double>, &relu_backward<double>},
      {&tanh_out<double>, &tanh_backward<double>},
      {&sigmoid<double>, &sigmoid_backward<double>},
  };
  for (const auto& [fwd, bwd] : ops) {
    TensorD x({1, 1, 2});
    x.data = {-0.5, 0.5};
    const TensorD r({1, 1, 2}, 1.0);
    const auto loss = [&] { return dot(fwd(x), r); };
    const auto g = bwd(fwd(x), r);
    EXPECT_LT(max_rel(g, numeric_grad(x, loss)), 1e-6);
  }
}

TEST(Xavier, MomentsAndDeterminism) {
  Rng a(6), b(6);
  const auto t = xavier_init<double>({512, 512}, a);
  const double bound = std::sqrt(6.0 / 1024.0);
  double mean = 0, var = 0;
  for (double v : t.data) {
    EXPECT_LE(std::abs(v), bound);
    mean += v;
  }
  mean /= static_cast<double>(t.size());
  for (double v : t.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(t.size());
  EXPECT_NEAR(var, 2.0 / 1024.0, 0.1 * 2.0 / 1024.0);
  EXPECT_LT(std::abs(mean), 0.01 * bound);
  EXPECT_EQ(xavier_init<double>({512, 512}, b), t);
  Rng c(6);
  EXPECT_THROW(xavier_init<double>({5}, c), Error);
}

TEST(Xavier, BiasesZero) {
  UNet<double> net({16, 2});
  Rng rng(7);
  init_params(net.params(), rng);
  for (const auto& p : net.params().params) {
    const bool bias = p.name.ends_with(".b");
    double m = 0;
    for (double v : p.value.data) m = std::max(m, std::abs(v));
    if (bias)
      EXPECT_EQ(m, 0.0) << p.name;
    else
      EXPECT_GT(m, 0.0) << p.name;
  }
}

TEST(UNet, ShapesAndZeroParameters) {
  for (int S : {32, 64, 128}) {
    UNet<float> net({S, 2});
    EXPECT_EQ(net.config().depth(), static_cast<int>(std::log2(S)));
    Rng rng(8);
    Tensor<float> x({1, S, S});
    for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1, 1));
    const auto zero = net.forward(x);
    EXPECT_EQ(zero.shape, x.shape);
    for (float v : zero.data) EXPECT_EQ(v, 0.0f);
    init_params(net.params(), rng);
    const auto y = net.forward(x);
    EXPECT_EQ(y.shape, x.shape);
    for (float v : y.data) EXPECT_LE(std::abs(v), 1.0f);
  }
  EXPECT_THROW(UNet<float>({48, 2}), Error);
  UNet<float> net({32, 2});
  EXPECT_THROW(net.forward(Tensor<float>({1, 16, 16})), Error);
}

TEST(UNet, ChannelCapAndSkipWiring) {
  UNet<double> net({128, 2});
  EXPECT_EQ(net.config().encoder_channels(1), 2);
  EXPECT_EQ(net.config().encoder_channels(4), 16);
  EXPECT_EQ(net.config().encoder_channels(7), 16);
  // Decoder layer i > 1 reads its own previous output plus the mirrored encoder layer.
  const auto& ps = net.params();
  for (const auto& p : ps.params)
    if (p.name == "dec2.w") {
      EXPECT_EQ(p.value.dim(0), 2 * net.config().encoder_channels(6));
    }
}

TEST(UNet, WholeNetworkGradientCheck) {
  UNet<double> net({16, 2});
  Rng rng(9);
  init_params(net.params(), rng);
  for (auto& p : net.params().params)
    if (p.name.ends_with(".b"))
      for (auto& v : p.value.data) v = rng.uniform(-0.1, 0.1);
  auto x = random_tensor({1, 16, 16}, rng);
  const auto r = random_tensor({1, 16, 16}, rng);
  UNet<double>::Cache cache;
  net.forward(x, &cache);
  net.params().zero_grad();
  const auto gx = net.backward(cache, r);
  const auto loss = [&] { return dot(net.forward(x), r); };

  std::vector<double> analytic(gx.data), numeric = numeric_grad(x, loss);
  for (auto& p : net.params().params) {
    const auto n = numeric_grad(p.value, loss);
    analytic.insert(analytic.end(), p.grad.data.begin(), p.grad.data.end());
    numeric.insert(numeric.end(), n.begin(), n.end());
    EXPECT_LT(norm_rel(p.grad.data, n), 1e-3) << p.name;
  }
  EXPECT_LT(norm_rel(analytic, numeric), 1e-3);
}

TEST(PatchGAN, OutputSize) {
  const PatchGANConfig cfg{3, 8};
  EXPECT_EQ(cfg.output_size(32), 2);
  EXPECT_EQ(cfg.output_size(128), 8);
  PatchGAN<float> d(cfg, 32);
  const auto out = d.forward(Tensor<float>({1, 32, 32}), Tensor<float>({1, 32, 32}));
  EXPECT_EQ(out.shape, (std::vector<int>{1, 2, 2}));
  EXPECT_THROW(PatchGAN<float>(cfg, 8), Error);
  EXPECT_THROW(d.forward(Tensor<float>({1, 32, 32}), Tensor<float>({1, 16, 16})), Error);
}

TEST(PatchGAN, ConditioningIsOrdered) {
  PatchGAN<double> d({3, 4}, 32);
  Rng rng(10);
  init_params(d.params(), rng);
  const auto a = random_tensor({1, 32, 32}, rng), b = random_tensor({1, 32, 32}, rng);
  EXPECT_NE(d.forward(a, b), d.forward(b, a));
}

TEST(PatchGAN, GradientCheck) {
  PatchGAN<double> d({2, 2}, 16);
  Rng rng(11);
  init_params(d.params(), rng);
  auto cond = random_tensor({1, 16, 16}, rng);
  auto y = random_tensor({1, 16, 16}, rng);
  const auto out_shape = d.forward(cond, y).shape;
  const auto r = random_tensor(out_shape, rng);
  PatchGAN<double>::Cache cache;
  d.forward(cond, y, &cache);
  d.params().zero_grad();
  const auto g_in = d.backward(cache, r);
  const auto loss = [&] { return dot(d.forward(cond, y), r); };
  const auto [gc, gy] = split_channels(g_in, 1);
  EXPECT_LT(norm_rel(gc.data, numeric_grad(cond, loss)), 1e-3);
  EXPECT_LT(norm_rel(gy.data, numeric_grad(y, loss)), 1e-3);
  for (auto& p : d.params().params) EXPECT_LT(norm_rel(p.grad.data, numeric_grad(p.value, loss)), 1e-3) << p.name;

  // Without accumulation the parameter gradients stay untouched.
  d.params().zero_grad();
  const auto again = d.backward(cache, r, false);
  EXPECT_EQ(again, g_in);
  for (const auto& p : d.params().params)
    for (double v : p.grad.data) EXPECT_EQ(v, 0.0);
}

TEST(Kernels, ParallelMatchesSerialBitwise) {
  ThreadCount threads(4);
  Rng rng(12);
  Tensor<float> x({8, 32, 32}), w({16, 8, 4, 4}), b({16}), g({16, 16, 16});
  for (auto* t : {&x, &w, &b, &g})
    for (auto& v : t->data) v = static_cast<float>(rng.uniform(-1, 1));
  EXPECT_EQ(conv2d_forward(x, w, b, 2, 1), serial::conv2d_forward(x, w, b, 2, 1));
  const auto p = conv2d_backward(x, w, g, 2, 1);
  const auto s = serial::conv2d_backward(x, w, g, 2, 1);
  EXPECT_EQ(p.input, s.input);
  EXPECT_EQ(p.weight, s.weight);
  EXPECT_EQ(p.bias, s.bias);

  Tensor<float> wd({16, 8, 4, 4}), bd({8});
  for (auto* t : {&wd, &bd})
    for (auto& v : t->data) v = static_cast<float>(rng.uniform(-1, 1));
  EXPECT_EQ(deconv2d_forward(g, wd, bd, 2, 1), serial::deconv2d_forward(g, wd, bd, 2, 1));
  const auto pd = deconv2d_backward(g, wd, x, 2, 1);
  const auto sd = serial::deconv2d_backward(g, wd, x, 2, 1);
  EXPECT_EQ(pd.input, sd.input);
  EXPECT_EQ(pd.weight, sd.weight);
  EXPECT_EQ(pd.bias, sd.bias);
}

TEST(Kernels, NetworkDeterministicAcrossThreadCounts) {
  UNet<float> net({32, 4});
  Rng rng(13);
  init_params(net.params(), rng);
  Tensor<float> x({1, 32, 32});
  for (auto& v : x.data) v = static_cast<float>(rng.uniform(-1, 1));
  Tensor<float> one, four;
  {
    ThreadCount t(1);
    one = net.forward(x);
  }
  {
    ThreadCount t(4);
    four = net.forward(x);
  }
  EXPECT_EQ(one, four);
}
