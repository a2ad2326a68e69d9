#include <gtest/gtest.h>

#include <cmath>

#include "styleaug/nn/layers.hpp"
#include "styleaug/nn/loss.hpp"
#include "support.hpp"

using namespace styleaug;
using namespace styleaug::nn;
using styleaug::test_support::numeric_derivative;
using styleaug::test_support::Projection;
using styleaug::test_support::random_normal;

namespace {

struct GradCheck {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst = 0.0;
};

bool close(double analytic, double numeric, double tol) {
  return std::fabs(analytic - numeric) <= tol * std::max(1.0, std::fabs(numeric));
}

// Compares analytic input and parameter gradients of `layer` with central
// differences on a random subset of entries.
GradCheck check_gradients(Layer& layer, Tensor x, bool training, Rng& rng, double tol = 1e-2,
                          std::size_t samples = 12, double h = 1e-2) {
  Saved saved;
  const Tensor y = layer.forward(x, &saved, training);
  Projection proj{random_normal(y.shape(), rng)};
  auto params = layer.parameters();
  auto grads = make_gradients(layer);
  const Tensor dx = layer.backward(proj.weights, saved, grads);
  EXPECT_EQ(dx.shape(), x.shape());

  auto loss = [&] { return proj(layer.forward(x, nullptr, training)); };
  GradCheck r;
  auto visit = [&](Tensor& t, const Tensor& g) {
    for (std::size_t k = 0; k < std::min(samples, t.size()); ++k) {
      const auto i = static_cast<std::size_t>(uniform_below(rng, t.size()));
      const double num = numeric_derivative(t, i, loss, h);
      ++r.checked;
      const double err = std::fabs(g[i] - num) / std::max(1.0, std::fabs(num));
      r.worst = std::max(r.worst, err);
      if (!close(g[i], num, tol)) ++r.failed;
    }
  };
  visit(x, dx);
  for (std::size_t p = 0; p < params.size(); ++p) visit(*params[p].value, grads[p]);
  return r;
}

// Direct convolution used as the reference for the im2col path.
Tensor naive_conv(const Tensor& x, const Tensor& weight, const Tensor* bias, std::size_t stride, std::size_t pad,
                  bool reflect) {
  const std::size_t co = weight.dim(0), ci = weight.dim(1), k = weight.dim(2);
  const std::size_t ho = (x.h() + 2 * pad - k) / stride + 1, wo = (x.w() + 2 * pad - k) / stride + 1;
  Tensor y({x.n(), co, ho, wo});
  auto fetch = [&](std::size_t n, std::size_t c, long iy, long ix) -> double {
    const long h = static_cast<long>(x.h()), w = static_cast<long>(x.w());
    if (reflect) {
      if (iy < 0) iy = -iy;
      if (iy >= h) iy = 2 * (h - 1) - iy;
      if (ix < 0) ix = -ix;
      if (ix >= w) ix = 2 * (w - 1) - ix;
    } else if (iy < 0 || ix < 0 || iy >= h || ix >= w) {
      return 0.0;
    }
    return x.at(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
  };
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                acc += weight[((o * ci + c) * k + ky) * k + kx] * fetch(n, c, iy, ix);
              }
          y.at(n, o, oy, ox) = static_cast<float>(acc);
        }
  return y;
}

// Inputs whose values are pairwise at least 0.05 apart and away from zero,
// so ReLU and max-pool have no kinks within the difference step.
Tensor spread_input(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  auto perm = random_permutation(t.size(), rng);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = 0.05 * (static_cast<double>(perm[i]) - static_cast<double>(t.size()) / 2.0) + 0.025;
    t[i] = static_cast<float>(v);
  }
  return t;
}

}  // namespace

struct ConvCase {
  std::size_t in, out, k, stride, pad;
  Padding mode;
  bool bias;
  std::size_t size;
};

class ConvTest : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvTest, MatchesDirectConvolution) {
  const auto c = GetParam();
  Rng rng(11);
  Conv2d conv(c.in, c.out, c.k, c.stride, c.pad, c.mode, c.bias, rng);
  const Tensor x = random_normal({2, c.in, c.size, c.size + 1}, rng);
  auto params = conv.parameters();
  if (c.bias) {
    for (auto& v : params[1].value->values()) v = static_cast<float>(uniform01(rng) - 0.5);
  }
  const Tensor y = conv.forward(x, nullptr, false);
  const Tensor want =
      naive_conv(x, *params[0].value, c.bias ? params[1].value : nullptr, c.stride, c.pad, c.mode == Padding::reflect);
  ASSERT_EQ(y.shape(), want.shape());
  for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(y[i], want[i], 1e-4) << "at " << i;
}

TEST_P(ConvTest, GradientsMatchFiniteDifferences) {
  const auto c = GetParam();
  Rng rng(12);
  Conv2d conv(c.in, c.out, c.k, c.stride, c.pad, c.mode, c.bias, rng);
  const auto r = check_gradients(conv, random_normal({2, c.in, c.size, c.size}, rng), false, rng);
  EXPECT_EQ(r.failed, 0u) << "worst relative error " << r.worst;
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvTest,
                         ::testing::Values(ConvCase{3, 4, 3, 1, 1, Padding::zero, false, 6},
                                           ConvCase{3, 5, 3, 2, 1, Padding::zero, false, 7},
                                           ConvCase{2, 3, 3, 1, 1, Padding::reflect, true, 5},
                                           ConvCase{4, 6, 1, 1, 0, Padding::zero, true, 4},
                                           ConvCase{4, 6, 1, 2, 0, Padding::zero, false, 6},
                                           ConvCase{3, 2, 7, 2, 3, Padding::zero, false, 9}));

TEST(Conv2d, ReflectPaddingTooLargeIsRejected) {
  Rng rng(1);
  Conv2d conv(1, 1, 5, 1, 2, Padding::reflect, false, rng);
  EXPECT_THROW(conv.forward(Tensor({1, 1, 2, 2}), nullptr, false), ShapeError);
}

TEST(Conv2d, ChannelMismatchIsRejected) {
  Rng rng(1);
  Conv2d conv(3, 4, 3, 1, 1, Padding::zero, false, rng);
  EXPECT_THROW(conv.forward(Tensor({1, 2, 5, 5}), nullptr, false), ShapeError);
}

TEST(BatchNorm2d, TrainingGradients) {
  Rng rng(3);
  BatchNorm2d bn(3);
  auto params = bn.parameters();
  for (auto& v : params[0].value->values()) v = static_cast<float>(0.5 + uniform01(rng));
  const auto r = check_gradients(bn, random_normal({4, 3, 3, 3}, rng, 2.0f, 0.5f), true, rng);
  EXPECT_EQ(r.failed, 0u) << "worst relative error " << r.worst;
}

TEST(BatchNorm2d, TrainingOutputIsStandardized) {
  Rng rng(4);
  BatchNorm2d bn(2);
  const Tensor x = random_normal({5, 2, 4, 4}, rng, 3.0f, 1.0f);
  const Tensor y = bn.forward(x, nullptr, true);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0, sq = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < 5; ++i)
      for (float v : y.plane(i, c)) {
        s += v;
        sq += v * v;
        ++n;
      }
    EXPECT_NEAR(s / n, 0.0, 1e-5);
    EXPECT_NEAR(sq / n, 1.0, 1e-3);
  }
}

TEST(BatchNorm2d, RunningStatsFollowMomentum) {
  Rng rng(5);
  BatchNorm2d bn(1);
  const Tensor x = random_normal({4, 1, 3, 3}, rng, 2.0f, 3.0f);
  Saved saved;
  bn.forward(x, &saved, true);
  bn.update_running_stats(saved);
  double mean = 0;
  for (float v : x.values()) mean += v;
  mean /= x.size();
  double var = 0;
  for (float v : x.values()) var += (v - mean) * (v - mean);
  var /= (x.size() - 1);
  auto buffers = bn.buffers();
  EXPECT_NEAR((*buffers[0].value)[0], 0.1 * mean, 1e-5);
  EXPECT_NEAR((*buffers[1].value)[0], 0.9 + 0.1 * var, 1e-4);
  // Inference uses the running statistics.
  const Tensor y = bn.forward(x, nullptr, false);
  EXPECT_NEAR(y[0], (x[0] - 0.1 * mean) / std::sqrt(0.9 + 0.1 * var + 1e-5), 1e-4);
}

TEST(ReLU, Gradients) {
  Rng rng(6);
  ReLU relu;
  const auto r = check_gradients(relu, spread_input({2, 2, 3, 3}, rng), false, rng);
  EXPECT_EQ(r.failed, 0u);
}

TEST(MaxPool2d, GradientsAndShape) {
  Rng rng(7);
  MaxPool2d pool(3, 2, 1);
  const Tensor x = spread_input({2, 2, 7, 7}, rng);
  EXPECT_EQ(pool.forward(x, nullptr, false).shape(), (std::vector<std::size_t>{2, 2, 4, 4}));
  const auto r = check_gradients(pool, x, false, rng);
  EXPECT_EQ(r.failed, 0u);
}

TEST(MaxPool2d, CeilModeKeepsPartialWindow) {
  MaxPool2d floor_pool(2, 2, 0, false), ceil_pool(2, 2, 0, true);
  EXPECT_EQ(floor_pool.output_size(5), 2u);
  EXPECT_EQ(ceil_pool.output_size(5), 3u);
  Tensor x({1, 1, 5, 5});
  for (std::size_t i = 0; i < 25; ++i) x[i] = static_cast<float>(i);
  const Tensor y = ceil_pool.forward(x, nullptr, false);
  EXPECT_EQ(y.at(0, 0, 2, 2), 24.0f);
}

TEST(Upsample2x, NearestAndAdjoint) {
  Rng rng(8);
  Upsample2x up;
  const Tensor x = random_normal({1, 2, 3, 2}, rng);
  const Tensor y = up.forward(x, nullptr, false);
  ASSERT_EQ(y.shape(), (std::vector<std::size_t>{1, 2, 6, 4}));
  EXPECT_EQ(y.at(0, 1, 5, 3), x.at(0, 1, 2, 1));
  const auto r = check_gradients(up, x, false, rng);
  EXPECT_EQ(r.failed, 0u);
}

TEST(GlobalAvgPool, Gradients) {
  Rng rng(9);
  GlobalAvgPool gap;
  const auto r = check_gradients(gap, random_normal({3, 4, 2, 3}, rng), false, rng);
  EXPECT_EQ(r.failed, 0u);
}

TEST(Linear, Gradients) {
  Rng rng(10);
  Linear fc(5, 3, rng);
  const auto r = check_gradients(fc, random_normal({4, 5}, rng), false, rng);
  EXPECT_EQ(r.failed, 0u);
}

TEST(BasicBlock, GradientsWithProjection) {
  Rng rng(13);
  BasicBlock block(2, 4, 2, rng);
  EXPECT_EQ(block.parameters().size(), 9u);  // 2 convs + 2 bn (w,b) + projection conv + bn
  const auto r = check_gradients(block, random_normal({3, 2, 5, 5}, rng), true, rng, 2e-2, 10, 1e-3);
  // Hidden ReLUs may sit within a difference step of their kink.
  EXPECT_LE(r.failed, r.checked / 20) << "worst relative error " << r.worst;
}

TEST(BasicBlock, IdentityShortcut) {
  Rng rng(14);
  BasicBlock block(3, 3, 1, rng);
  EXPECT_EQ(block.parameters().size(), 6u);
  const auto r = check_gradients(block, random_normal({3, 3, 4, 4}, rng), true, rng, 2e-2, 10, 1e-3);
  EXPECT_LE(r.failed, r.checked / 20) << "worst relative error " << r.worst;
}

TEST(Sequential, CloneIsDeep) {
  Rng rng(15);
  Sequential a;
  a.add<Conv2d>(1, 1, 1, 1, 0, Padding::zero, false, rng);
  Sequential b = a;
  (*b.parameters()[0].value)[0] += 1.0f;
  EXPECT_NE((*a.parameters()[0].value)[0], (*b.parameters()[0].value)[0]);
  EXPECT_EQ(a.layer_descriptors(), b.layer_descriptors());
}

TEST(Sequential, TapGradientsMatchFiniteDifferences) {
  Rng rng(16);
  Sequential net;
  net.add<Conv2d>(2, 3, 3, 1, 1, Padding::reflect, true, rng);
  net.add<ReLU>();
  net.add<Conv2d>(3, 3, 3, 1, 1, Padding::reflect, true, rng);
  net.add<ReLU>();
  net.add<Conv2d>(3, 2, 3, 1, 1, Padding::reflect, true, rng);
  Tensor x = random_normal({2, 2, 4, 4}, rng);
  const std::array<std::size_t, 1> taps{1};
  Saved saved;
  // Only the first four layers run; the tap at layer 1 and the layer-3
  // output both feed the loss.
  const auto outs = net.forward_taps(x, taps, 4, &saved, false);
  ASSERT_EQ(outs.size(), 2u);
  Projection p_tap{random_normal(outs[0].shape(), rng)};
  Projection p_out{random_normal(outs[1].shape(), rng)};
  auto grads = make_gradients(net);
  std::map<std::size_t, Tensor> tap_grads{{1, p_tap.weights}};
  const Tensor dx = net.backward_taps(p_out.weights, tap_grads, 4, saved, grads);
  auto loss = [&] {
    const auto o = net.forward_taps(x, taps, 4, nullptr, false);
    return p_tap(o[0]) + p_out(o[1]);
  };
  auto params = net.parameters();
  std::size_t failed = 0, checked = 0;
  for (std::size_t k = 0; k < 10; ++k) {
    const auto i = static_cast<std::size_t>(uniform_below(rng, x.size()));
    failed += !close(dx[i], numeric_derivative(x, i, loss, 1e-3), 2e-2);
    ++checked;
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t k = 0; k < 4; ++k) {
      const auto i = static_cast<std::size_t>(uniform_below(rng, params[p].value->size()));
      const double num = numeric_derivative(*params[p].value, i, loss, 1e-3);
      // The last conv is not run, so its gradient must stay zero.
      if (p >= 4) {
        EXPECT_EQ(grads[p][i], 0.0f);
        EXPECT_EQ(num, 0.0);
      } else {
        failed += !close(grads[p][i], num, 2e-2);
      }
      ++checked;
    }
  }
  EXPECT_LE(failed, checked / 20);
}

TEST(Loss, SoftmaxCrossEntropyMatchesDefinition) {
  Rng rng(17);
  Tensor logits = random_normal({3, 4}, rng, 2.0f);
  const std::vector<MixTarget> targets{MixTarget::hard(2), {0, 3, 0.25f}, MixTarget::hard(1)};
  const auto r = softmax_cross_entropy(logits, targets);
  double want = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    double mx = -1e300;
    for (std::size_t k = 0; k < 4; ++k) mx = std::max(mx, static_cast<double>(logits[i * 4 + k]));
    double z = 0;
    for (std::size_t k = 0; k < 4; ++k) z += std::exp(logits[i * 4 + k] - mx);
    auto ce = [&](int y) { return -(logits[i * 4 + static_cast<std::size_t>(y)] - mx - std::log(z)); };
    want += targets[i].lambda * ce(targets[i].label_a) + (1 - targets[i].lambda) * ce(targets[i].label_b);
  }
  want /= 3;
  EXPECT_NEAR(r.loss, want, 1e-6);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double num = numeric_derivative(logits, i, [&] { return softmax_cross_entropy(logits, targets).loss; }, 1e-3);
    EXPECT_NEAR(r.grad[i], num, 1e-3);
  }
}

TEST(Loss, TargetCountMismatch) {
  Tensor logits({2, 3});
  const std::vector<MixTarget> targets{MixTarget::hard(0)};
  EXPECT_THROW(softmax_cross_entropy(logits, targets), ShapeError);
}

TEST(Loss, ArgmaxRows) {
  Tensor logits({2, 3}, std::vector<float>{0.1f, 0.7f, 0.2f, 3.0f, -1.0f, 2.0f});
  EXPECT_EQ(argmax_rows(logits), (std::vector<int>{1, 0}));
}
