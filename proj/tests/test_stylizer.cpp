#include <gtest/gtest.h>

#include <fstream>

#include "styleaug/data/synthetic.hpp"
#include "styleaug/stylizer.hpp"
#include "support.hpp"

using namespace styleaug;
using namespace styleaug::stylizer;
using styleaug::test_support::numeric_derivative;
using styleaug::test_support::random_normal;
using styleaug::test_support::TempDir;

namespace {

Tensor random_images(std::size_t n, std::size_t res, Rng& rng) {
  Tensor t({n, 3, res, res});
  for (auto& v : t.values()) v = static_cast<float>(uniform01(rng));
  return t;
}

// Population mean/std of plane (n, c), computed independently of the library.
std::pair<double, double> plane_stats(const Tensor& t, std::size_t n, std::size_t c) {
  const auto p = t.plane(n, c);
  double s = 0;
  for (float v : p) s += v;
  const double mu = s / p.size();
  double sq = 0;
  for (float v : p) sq += (v - mu) * (v - mu);
  return {mu, std::sqrt(sq / p.size())};
}

}  // namespace

TEST(InstanceStats, MatchesDirectComputation) {
  Rng rng(1);
  const Tensor f = random_normal({3, 4, 5, 6}, rng, 2.0f, 1.0f);
  const auto s = instance_stats(f);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t c = 0; c < 4; ++c) {
      const auto [mu, sd] = plane_stats(f, n, c);
      EXPECT_NEAR(s.mean[n * 4 + c], mu, 1e-5);
      EXPECT_NEAR(s.std[n * 4 + c], sd, 1e-5);
    }
}

TEST(Adain, OutputCarriesStyleStatistics) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + uniform_below(rng, 4), c = 1 + uniform_below(rng, 8);
    const std::size_t h = 2 + uniform_below(rng, 7), w = 2 + uniform_below(rng, 7);
    const Tensor fc = random_normal({n, c, h, w}, rng, 1.5f, 0.3f);
    const Tensor fs = random_normal({n, c, h + 1, w}, rng, 0.7f, -1.0f);
    const Tensor out = adain_transform(fc, fs);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        if (plane_stats(fc, i, k).second <= 1e-3) continue;
        const auto [mu_s, sd_s] = plane_stats(fs, i, k);
        const auto [mu_o, sd_o] = plane_stats(out, i, k);
        EXPECT_NEAR(mu_o, mu_s, 1e-4 * std::max(1.0, std::fabs(mu_s)));
        EXPECT_NEAR(sd_o, sd_s, 1e-4 * std::max(1.0, sd_s));
      }
  }
}

TEST(Adain, StyleBatchOfOneBroadcasts) {
  Rng rng(3);
  const Tensor fc = random_normal({3, 2, 4, 4}, rng);
  const Tensor fs = random_normal({1, 2, 4, 4}, rng, 2.0f, 1.0f);
  const Tensor out = adain_transform(fc, fs);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(plane_stats(out, i, 1).first, plane_stats(fs, 0, 1).first, 1e-4);
  }
  EXPECT_THROW(adain_transform(fc, random_normal({2, 2, 4, 4}, rng)), ShapeError);
  EXPECT_THROW(adain_transform(fc, random_normal({3, 3, 4, 4}, rng)), ShapeError);
}

TEST(Adain, SelfStyleIsIdentity) {
  Rng rng(4);
  const Tensor f = random_normal({2, 5, 6, 6}, rng, 1.0f, 0.5f);
  const Tensor out = adain_transform(f, f);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(out[i], f[i], 1e-5);
}

TEST(Adain, ConstantContentChannelTakesStyleMean) {
  Tensor fc({1, 1, 3, 3}, 2.0f);
  Rng rng(5);
  const Tensor fs = random_normal({1, 1, 3, 3}, rng, 1.0f, 4.0f);
  const Tensor out = adain_transform(fc, fs);
  for (float v : out.values()) EXPECT_NEAR(v, plane_stats(fs, 0, 0).first, 1e-5);
}

TEST(Stylizer, ArchitectureShapes) {
  const auto w = StylizerWeights::create(EncoderArch::cifar_small, 1);
  EXPECT_EQ(w.stride(), 4u);
  EXPECT_EQ(w.feature_channels(), 128u);
  EXPECT_EQ(w.style_layers().size(), 4u);
  Rng rng(6);
  const Tensor x = random_images(2, 16, rng);
  const Tensor f = w.encode(x);
  EXPECT_EQ(f.shape(), (std::vector<std::size_t>{2, 128, 4, 4}));
  EXPECT_EQ(w.decode(f).shape(), x.shape());

  const auto vgg = StylizerWeights::create(EncoderArch::vgg_relu4_1, 1);
  EXPECT_EQ(vgg.stride(), 8u);
  EXPECT_EQ(vgg.feature_channels(), 512u);
  EXPECT_EQ(vgg.encode(random_images(1, 16, rng)).shape(), (std::vector<std::size_t>{1, 512, 2, 2}));
}

TEST(Stylizer, ResolutionCheckNamesMinimum) {
  const auto w = StylizerWeights::create(EncoderArch::cifar_small, 1);
  try {
    w.check_resolution(18, 16);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("minimum resolution is 4x4"), std::string::npos);
  }
  EXPECT_THROW(w.check_resolution(2, 2), ShapeError);
  EXPECT_NO_THROW(w.check_resolution(8, 12));
}

TEST(Stylizer, AlphaZeroIsReconstructionExactly) {
  const auto w = StylizerWeights::create(EncoderArch::cifar_small, 2);
  Rng rng(7);
  const Tensor c = random_images(3, 16, rng), s = random_images(3, 16, rng);
  EXPECT_EQ(stylize01(c, s, w, 0.0f), w.reconstruct(c));
  EXPECT_EQ(stylize01(c, c, w, 0.0f), w.reconstruct(c));
}

TEST(Stylizer, OutputInUnitRangeAndAlphaValidated) {
  const auto w = StylizerWeights::create(EncoderArch::cifar_small, 3);
  Rng rng(8);
  const Tensor c = random_images(2, 8, rng), s = random_images(2, 8, rng);
  for (float alpha : {0.0f, 0.5f, 1.0f}) {
    const Tensor out = stylize01(c, s, w, alpha);
    for (float v : out.values()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  EXPECT_THROW(stylize01(c, s, w, 1.5f), ConfigError);
  EXPECT_THROW(stylize01(c, s, w, -0.1f), ConfigError);
  EXPECT_THROW(stylize01(c, random_images(2, 12, rng), w), ShapeError);
}

TEST(Stylizer, PermutedMatchesExplicitStyleBatch) {
  const auto w = StylizerWeights::create(EncoderArch::cifar_small, 4);
  Rng rng(9);
  const Tensor c = random_images(4, 8, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  const Tensor a = stylize_permuted01(c, perm, w, 0.7f);
  const Tensor b = stylize01(c, gather_batch(c, perm), w, 0.7f);
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5);
}

TEST(Stylizer, NormalizedBatchKeepsContentLabels) {
  const auto w = StylizerWeights::create(EncoderArch::cifar_small, 4);
  const auto ds = data::make_synthetic(6, 8, 3, data::Split::test, 1);
  std::vector<std::size_t> a{0, 1, 2}, b{3, 4, 5};
  const auto out = stylize(ds.batch(a), ds.batch(b), w);
  EXPECT_EQ(out.labels, ds.batch(a).labels);
  EXPECT_EQ(out.pixels.shape(), ds.batch(a).pixels.shape());
}

TEST(DecoderLoss, GradientsMatchFiniteDifferences) {
  auto w = StylizerWeights::create(EncoderArch::cifar_small, 5);
  Rng rng(10);
  const Tensor c = random_images(2, 8, rng), s = random_images(2, 8, rng);
  const double sw = 10.0;
  std::vector<Tensor> grads = nn::make_gradients(w.mutable_decoder());
  decoder_loss(w, c, s, sw, &grads);
  auto total = [&] {
    const auto l = decoder_loss(w, c, s, sw, nullptr);
    return l.content + sw * l.style;
  };
  auto params = w.mutable_decoder().parameters();
  std::size_t checked = 0, failed = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (int k = 0; k < 3; ++k) {
      const auto i = static_cast<std::size_t>(uniform_below(rng, params[p].value->size()));
      const double num = numeric_derivative(*params[p].value, i, total, 1e-3);
      const double ana = grads[p][i];
      ++checked;
      if (std::fabs(ana - num) > 3e-2 * std::max(std::fabs(num), 1e-2)) ++failed;
    }
  }
  EXPECT_LE(failed, checked / 10) << failed << " of " << checked;
}

TEST(DecoderTraining, ReducesLossAndLeavesEncoderAlone) {
  const auto w = StylizerWeights::create(EncoderArch::cifar_small, 6);
  const auto ds = data::make_synthetic(32, 8, 4, data::Split::train, 2);
  DecoderTrainingOptions opt;
  opt.steps = 60;
  opt.lr = 1e-3;
  opt.batch_size = 4;
  opt.seed = 3;
  opt.log_every = 1;
  const auto result = train_decoder(ds, w, opt);
  EXPECT_EQ(result.weights.encoder_fingerprint(), w.encoder_fingerprint());
  EXPECT_NE(result.weights.decoder_fingerprint(), w.decoder_fingerprint());
  ASSERT_GE(result.curve.size(), 20u);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    first += result.curve[i].total;
    last += result.curve[result.curve.size() - 1 - i].total;
  }
  EXPECT_LT(last, first);

  opt.steps = 0;
  EXPECT_EQ(train_decoder(ds, w, opt).weights.decoder_fingerprint(), w.decoder_fingerprint());
}

TEST(WeightFile, RoundTrip) {
  TempDir dir("weights");
  const auto w = StylizerWeights::create(EncoderArch::cifar_small, 7);
  save_weights(w, dir / "w.bin");
  const auto back = load_weights(dir / "w.bin", EncoderArch::cifar_small);
  EXPECT_EQ(back.encoder_fingerprint(), w.encoder_fingerprint());
  EXPECT_EQ(back.decoder_fingerprint(), w.decoder_fingerprint());
  EXPECT_THROW(load_weights(dir / "w.bin", EncoderArch::vgg_relu4_1), FormatError);
}

TEST(WeightFile, RejectsBadFiles) {
  TempDir dir("weights_bad");
  const auto w = StylizerWeights::create(EncoderArch::cifar_small, 7);
  save_weights(w, dir / "w.bin");
  std::string bytes;
  {
    std::ifstream in(dir / "w.bin", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& b) { std::ofstream(dir / "x.bin", std::ios::binary) << b; };

  write(bytes.substr(0, bytes.size() - 10));
  EXPECT_THROW(load_weights(dir / "x.bin"), FormatError);

  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  write(wrong_magic);
  EXPECT_THROW(load_weights(dir / "x.bin"), FormatError);

  std::string wrong_version = bytes;
  wrong_version[8] = 9;
  write(wrong_version);
  try {
    load_weights(dir / "x.bin");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version 9"), std::string::npos);
  }

  write(bytes + "junk");
  EXPECT_THROW(load_weights(dir / "x.bin"), FormatError);
  EXPECT_THROW(load_weights(dir / "missing.bin"), FormatError);
}
