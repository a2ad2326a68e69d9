#include "styleaug/stylizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "styleaug/nn/optim.hpp"
#include "styleaug/nn/serialize.hpp"

namespace styleaug::stylizer {

namespace fs = std::filesystem;
using nn::Padding;

// ------------------------------------------------------------- statistics

ChannelStats instance_stats(const Tensor& f) {
  if (f.rank() != 4) throw ShapeError("instance_stats: expected N x C x H x W, got " + f.shape_string());
  const std::size_t n = f.n(), c = f.c();
  const double hw = static_cast<double>(f.h() * f.w());
  ChannelStats s{Tensor({n, c}), Tensor({n, c})};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      auto p = f.plane(i, ch);
      double sum = 0.0;
      for (float v : p) sum += v;
      const double mu = sum / hw;
      double sq = 0.0;
      for (float v : p) sq += (v - mu) * (v - mu);
      s.mean[i * c + ch] = static_cast<float>(mu);
      s.std[i * c + ch] = static_cast<float>(std::sqrt(sq / hw));
    }
  }
  return s;
}

Tensor adain_transform(const Tensor& content, const ChannelStats& cs, const ChannelStats& ss, float eps) {
  const std::size_t n = content.n(), c = content.c();
  if (ss.mean.dim(1) != c) {
    throw ShapeError("adain: content has " + std::to_string(c) + " channels, style has " +
                     std::to_string(ss.mean.dim(1)));
  }
  const std::size_t style_n = ss.mean.dim(0);
  if (style_n != n && style_n != 1) {
    throw ShapeError("adain: style batch " + std::to_string(style_n) + " does not broadcast to " + std::to_string(n));
  }
  Tensor out = Tensor::zeros_like(content);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t si = style_n == 1 ? 0 : i;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double mu_c = cs.mean[i * c + ch];
      const double denom = std::max(static_cast<double>(cs.std[i * c + ch]), static_cast<double>(eps));
      const double scale = ss.std[si * c + ch] / denom;
      const double mu_s = ss.mean[si * c + ch];
      auto in = content.plane(i, ch);
      auto o = out.plane(i, ch);
      for (std::size_t k = 0; k < in.size(); ++k) o[k] = static_cast<float>(scale * (in[k] - mu_c) + mu_s);
    }
  }
  return out;
}

Tensor adain_transform(const Tensor& content, const Tensor& style, float eps) {
  if (content.rank() != 4 || style.rank() != 4) throw ShapeError("adain: expected rank-4 feature maps");
  if (content.c() != style.c()) {
    throw ShapeError("adain: channel mismatch " + content.shape_string() + " vs " + style.shape_string());
  }
  return adain_transform(content, instance_stats(content), instance_stats(style), eps);
}

// ---------------------------------------------------------- architectures

std::string to_string(EncoderArch arch) {
  return arch == EncoderArch::cifar_small ? "cifar_small" : "vgg_relu4_1";
}

EncoderArch parse_encoder_arch(const std::string& name) {
  if (name == "cifar_small") return EncoderArch::cifar_small;
  if (name == "vgg_relu4_1" || name == "vgg") return EncoderArch::vgg_relu4_1;
  throw ConfigError("unknown encoder architecture '" + name + "' (expected cifar_small or vgg_relu4_1)");
}

namespace {

void conv_relu(nn::Sequential& s, std::size_t in, std::size_t out, Rng& rng) {
  s.add<nn::Conv2d>(in, out, 3, 1, 1, Padding::reflect, true, rng);
  s.add<nn::ReLU>();
}

}  // namespace

StylizerWeights StylizerWeights::create(EncoderArch arch, std::uint64_t seed) {
  StylizerWeights w;
  w.arch_ = arch;
  Rng enc_rng = make_rng(seed, Stream::init, 1);
  Rng dec_rng = make_rng(seed, Stream::init, 2);
  auto& e = w.encoder_;
  auto& d = w.decoder_;
  if (arch == EncoderArch::cifar_small) {
    conv_relu(e, 3, 32, enc_rng);    // 0,1  block 1
    e.add<nn::MaxPool2d>(2, 2);      // 2
    conv_relu(e, 32, 64, enc_rng);   // 3,4  block 2
    e.add<nn::MaxPool2d>(2, 2);      // 5
    conv_relu(e, 64, 128, enc_rng);  // 6,7  block 3
    conv_relu(e, 128, 128, enc_rng); // 8,9  block 4
    w.style_layers_ = {1, 4, 7, 9};
    w.texture_layer_ = 4;
    w.stride_ = 4;
    w.feature_channels_ = 128;

    conv_relu(d, 128, 64, dec_rng);
    d.add<nn::Upsample2x>();
    conv_relu(d, 64, 64, dec_rng);
    conv_relu(d, 64, 32, dec_rng);
    d.add<nn::Upsample2x>();
    conv_relu(d, 32, 32, dec_rng);
    d.add<nn::Conv2d>(32, 3, 3, 1, 1, Padding::reflect, true, dec_rng);
  } else {
    e.add<nn::Conv2d>(3, 3, 1, 1, 0, Padding::zero, true, enc_rng);  // 0
    conv_relu(e, 3, 64, enc_rng);                                    // 1,2   relu1_1
    conv_relu(e, 64, 64, enc_rng);                                   // 3,4
    e.add<nn::MaxPool2d>(2, 2, 0, true);                             // 5
    conv_relu(e, 64, 128, enc_rng);                                  // 6,7   relu2_1
    conv_relu(e, 128, 128, enc_rng);                                 // 8,9
    e.add<nn::MaxPool2d>(2, 2, 0, true);                             // 10
    conv_relu(e, 128, 256, enc_rng);                                 // 11,12 relu3_1
    conv_relu(e, 256, 256, enc_rng);                                 // 13,14
    conv_relu(e, 256, 256, enc_rng);                                 // 15,16
    conv_relu(e, 256, 256, enc_rng);                                 // 17,18
    e.add<nn::MaxPool2d>(2, 2, 0, true);                             // 19
    conv_relu(e, 256, 512, enc_rng);                                 // 20,21 relu4_1
    w.style_layers_ = {2, 7, 12, 21};
    w.texture_layer_ = 7;
    w.stride_ = 8;
    w.feature_channels_ = 512;

    conv_relu(d, 512, 256, dec_rng);
    d.add<nn::Upsample2x>();
    conv_relu(d, 256, 256, dec_rng);
    conv_relu(d, 256, 256, dec_rng);
    conv_relu(d, 256, 256, dec_rng);
    conv_relu(d, 256, 128, dec_rng);
    d.add<nn::Upsample2x>();
    conv_relu(d, 128, 128, dec_rng);
    conv_relu(d, 128, 64, dec_rng);
    d.add<nn::Upsample2x>();
    conv_relu(d, 64, 64, dec_rng);
    d.add<nn::Conv2d>(64, 3, 3, 1, 1, Padding::reflect, true, dec_rng);
  }
  return w;
}

void StylizerWeights::check_resolution(std::size_t h, std::size_t w) const {
  if (h < stride_ || w < stride_ || h % stride_ != 0 || w % stride_ != 0) {
    throw ShapeError("stylizer (" + to_string(arch_) + "): resolution " + std::to_string(h) + "x" +
                     std::to_string(w) + " is incompatible with encoder stride " + std::to_string(stride_) +
                     "; minimum resolution is " + std::to_string(stride_) + "x" + std::to_string(stride_) +
                     " and sides must be multiples of " + std::to_string(stride_));
  }
}

Tensor StylizerWeights::encode(const Tensor& images01) const {
  if (images01.rank() != 4 || images01.c() != 3) throw ShapeError("stylizer: expected N x 3 x H x W images");
  check_resolution(images01.h(), images01.w());
  return encoder_.forward(images01, nullptr, false);
}

Tensor StylizerWeights::decode(const Tensor& features) const { return decoder_.forward(features, nullptr, false); }

namespace {
void clamp01(Tensor& t) {
  for (auto& v : t.storage()) v = std::clamp(v, 0.0f, 1.0f);
}
}  // namespace

Tensor StylizerWeights::reconstruct(const Tensor& images01) const {
  Tensor out = decode(encode(images01));
  clamp01(out);
  return out;
}

std::uint64_t fingerprint(const nn::Sequential& net) {
  auto& mut = const_cast<nn::Sequential&>(net);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto& p : mut.parameters()) h = nn::fnv1a(p.value->data(), p.value->size() * sizeof(float), h);
  for (auto& b : mut.buffers()) h = nn::fnv1a(b.value->data(), b.value->size() * sizeof(float), h);
  return h;
}

std::uint64_t StylizerWeights::encoder_fingerprint() const { return fingerprint(encoder_); }
std::uint64_t StylizerWeights::decoder_fingerprint() const { return fingerprint(decoder_); }

// ------------------------------------------------------------- stylization

namespace {

void check_alpha(float alpha) {
  if (!(alpha >= 0.0f && alpha <= 1.0f)) throw ConfigError("stylize: alpha must lie in [0, 1]");
}

Tensor mix_and_decode(const Tensor& fc, const Tensor& transferred, const StylizerWeights& weights, float alpha) {
  Tensor mixed = transferred;
  if (alpha != 1.0f) {
    const float beta = 1.0f - alpha;
    for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] = alpha * transferred[i] + beta * fc[i];
  }
  Tensor out = weights.decode(mixed);
  clamp01(out);
  return out;
}

}  // namespace

Tensor stylize01(const Tensor& content01, const Tensor& style01, const StylizerWeights& weights, float alpha) {
  check_alpha(alpha);
  if (content01.rank() != 4 || style01.rank() != 4 || content01.h() != style01.h() || content01.w() != style01.w()) {
    throw ShapeError("stylize: content " + content01.shape_string() + " and style " + style01.shape_string() +
                     " must share resolution");
  }
  if (style01.n() != content01.n() && style01.n() != 1) throw ShapeError("stylize: style batch must be 1 or match content");
  const Tensor fc = weights.encode(content01);
  const Tensor fs = weights.encode(style01);
  return mix_and_decode(fc, adain_transform(fc, fs), weights, alpha);
}

Tensor stylize_permuted01(const Tensor& content01, std::span<const std::size_t> permutation,
                          const StylizerWeights& weights, float alpha) {
  check_alpha(alpha);
  if (permutation.size() != content01.n()) throw ShapeError("stylize: permutation length differs from batch size");
  const Tensor fc = weights.encode(content01);
  const ChannelStats cs = instance_stats(fc);
  const std::size_t n = fc.n(), c = fc.c();
  ChannelStats ss{Tensor({n, c}), Tensor({n, c})};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      ss.mean[i * c + ch] = cs.mean[permutation[i] * c + ch];
      ss.std[i * c + ch] = cs.std[permutation[i] * c + ch];
    }
  }
  return mix_and_decode(fc, adain_transform(fc, cs, ss), weights, alpha);
}

data::ImageBatch stylize(const data::ImageBatch& content, const data::ImageBatch& style, const StylizerWeights& weights,
                         float alpha) {
  const Tensor c01 = content.normalization.denormalize(content.pixels);
  const Tensor s01 = style.normalization.denormalize(style.pixels);
  data::ImageBatch out;
  out.pixels = stylize01(c01, s01, weights, alpha);
  content.normalization.normalize_inplace(out.pixels);
  out.labels = content.labels;
  out.indices = content.indices;
  out.normalization = content.normalization;
  return out;
}

// ------------------------------------------------------- decoder training

namespace {

constexpr double kStatEps = 1e-5;

// Adds the gradient of MSE(mean, target_mean) + MSE(std, target_std) w.r.t.
// the feature map into `grad` and returns the loss.
double stat_loss(const Tensor& f, const ChannelStats& target, double weight, Tensor& grad) {
  const std::size_t n = f.n(), c = f.c();
  const double hw = static_cast<double>(f.h() * f.w());
  const double nc = static_cast<double>(n * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      auto p = f.plane(i, ch);
      double sum = 0.0;
      for (float v : p) sum += v;
      const double mu = sum / hw;
      double sq = 0.0;
      for (float v : p) sq += (v - mu) * (v - mu);
      const double sigma = std::sqrt(sq / hw + kStatEps);
      const double dm = mu - target.mean[i * c + ch];
      const double ds = sigma - target.std[i * c + ch];
      loss += (dm * dm + ds * ds) / nc;
      const double gm = weight * 2.0 * dm / nc / hw;
      const double gs = weight * 2.0 * ds / nc / (hw * sigma);
      auto g = grad.plane(i, ch);
      for (std::size_t k = 0; k < p.size(); ++k) g[k] += static_cast<float>(gm + gs * (p[k] - mu));
    }
  }
  return loss;
}

ChannelStats loss_stats(const Tensor& f) {
  ChannelStats s = instance_stats(f);
  for (auto& v : s.std.storage()) v = static_cast<float>(std::sqrt(static_cast<double>(v) * v + kStatEps));
  return s;
}

}  // namespace

DecoderLoss decoder_loss(const StylizerWeights& weights, const Tensor& content01, const Tensor& style01,
                         double style_weight, std::vector<Tensor>* decoder_grads) {
  const auto& enc = weights.encoder();
  const auto& layers = weights.style_layers();
  const std::size_t depth = enc.size();
  weights.check_resolution(content01.h(), content01.w());

  const Tensor fc = enc.forward(content01, nullptr, false);
  const auto style_feats = enc.forward_taps(style01, layers, depth, nullptr, false);
  const Tensor target = adain_transform(fc, style_feats.back());

  nn::Saved dec_saved;
  const bool want_grads = decoder_grads != nullptr;
  Tensor g = weights.decoder().forward(target, want_grads ? &dec_saved : nullptr, true);

  nn::Saved enc_saved;
  const auto out_feats = enc.forward_taps(g, layers, depth, want_grads ? &enc_saved : nullptr, false);
  const Tensor& fg = out_feats.back();

  DecoderLoss result;
  std::map<std::size_t, Tensor> tap_grads;
  Tensor content_grad = Tensor::zeros_like(fg);
  const double numel = static_cast<double>(fg.size());
  double content = 0.0;
  for (std::size_t i = 0; i < fg.size(); ++i) {
    const double d = static_cast<double>(fg[i]) - target[i];
    content += d * d;
    content_grad[i] = static_cast<float>(2.0 * d / numel);
  }
  result.content = content / numel;
  for (std::size_t t = 0; t < layers.size(); ++t) {
    Tensor grad = Tensor::zeros_like(out_feats[t]);
    result.style += stat_loss(out_feats[t], loss_stats(style_feats[t]), style_weight, grad);
    tap_grads[layers[t]] = std::move(grad);
  }
  tap_grads[depth - 1] += content_grad;
  result.decoder_output = g;

  if (want_grads) {
    const Tensor dimg = enc.backward_taps(Tensor{}, tap_grads, depth, enc_saved, {});
    weights.decoder().backward(dimg, dec_saved, *decoder_grads);
  }
  return result;
}

DecoderTrainingResult train_decoder(const data::DatasetHandle& dataset, const StylizerWeights& weights,
                                    const DecoderTrainingOptions& options) {
  DecoderTrainingResult result{weights, {}};
  if (options.steps == 0) return result;
  if (dataset.size() == 0) throw ConfigError("train_decoder: empty dataset");
  if (options.batch_size == 0) throw ConfigError("train_decoder: batch size must be positive");
  const std::uint64_t encoder_before = weights.encoder_fingerprint();

  StylizerWeights current = weights;
  auto params = current.mutable_decoder().parameters();
  auto grads = nn::make_gradients(current.mutable_decoder());
  nn::Adam optim(params);
  Rng rng = make_rng(options.seed, Stream::style, 0xdec0de);

  for (std::size_t step = 0; step < options.steps; ++step) {
    std::vector<std::size_t> ci(options.batch_size), si(options.batch_size);
    for (auto& v : ci) v = static_cast<std::size_t>(uniform_below(rng, dataset.size()));
    for (auto& v : si) v = static_cast<std::size_t>(uniform_below(rng, dataset.size()));
    const Tensor content = dataset.images01(ci);
    const Tensor style = dataset.images01(si);

    nn::zero_gradients(grads);
    const DecoderLoss loss = decoder_loss(current, content, style, options.style_weight, &grads);
    const double total = loss.content + options.style_weight * loss.style;
    const DecoderLossRecord record{step, loss.content, loss.style, total};
    if (!std::isfinite(total)) {
      result.curve.push_back(record);
      throw DecoderDivergence("decoder training diverged at step " + std::to_string(step), current, result.curve);
    }
    if (step % std::max<std::size_t>(1, options.log_every) == 0 || step + 1 == options.steps) {
      result.curve.push_back(record);
    }
    const double lr = options.lr / (1.0 + options.lr_decay * static_cast<double>(step));
    optim.step(params, grads, lr);
  }
  if (current.encoder_fingerprint() != encoder_before) throw Error("train_decoder: encoder parameters changed");
  result.weights = std::move(current);
  return result;
}

// ------------------------------------------------------------ weight files

namespace {

constexpr char kMagic[8] = {'S', 'T', 'Y', 'A', 'U', 'G', 'W', '\0'};

void write_descriptors(nn::BinaryWriter& w, const std::vector<std::string>& d) {
  w.u64(d.size());
  for (const auto& s : d) w.str(s);
}

std::vector<std::string> read_descriptors(nn::BinaryReader& r) {
  const auto n = r.u64();
  if (n > 100000) throw FormatError("stylizer weights: corrupt layer count");
  std::vector<std::string> out(n);
  for (auto& s : out) s = r.str();
  return out;
}

std::string descriptor_diff(const std::string& part, const std::vector<std::string>& expected,
                            const std::vector<std::string>& found) {
  std::ostringstream os;
  const std::size_t n = std::max(expected.size(), found.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::string e = i < expected.size() ? expected[i] : "<none>";
    const std::string f = i < found.size() ? found[i] : "<none>";
    if (e != f) os << "\n  " << part << " layer " << i << ": expected '" << e << "', found '" << f << "'";
  }
  return os.str();
}

}  // namespace

void save_weights(const StylizerWeights& weights, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write stylizer weights to " + path.string());
  nn::BinaryWriter w(out);
  w.raw(kMagic, sizeof kMagic);
  w.u32(weights.version());
  w.str(to_string(weights.arch()));
  write_descriptors(w, weights.encoder().layer_descriptors());
  write_descriptors(w, weights.decoder().layer_descriptors());
  auto& enc = const_cast<nn::Sequential&>(weights.encoder());
  auto& dec = const_cast<nn::Sequential&>(weights.decoder());
  auto params = enc.parameters("encoder.");
  for (auto& p : dec.parameters("decoder.")) params.push_back(p);
  w.u64(params.size());
  for (const auto& p : params) {
    w.str(p.name);
    w.tensor(*p.value);
  }
  if (!out) throw Error("failed writing stylizer weights to " + path.string());
}

StylizerWeights load_weights(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open stylizer weights " + path.string());
  nn::BinaryReader r(in, "stylizer weights " + path.string());
  char magic[8];
  r.raw(magic, sizeof magic);
  if (!std::equal(magic, magic + 8, kMagic)) throw FormatError(path.string() + " is not a stylizer weight file");
  const auto version = r.u32();
  if (version != kWeightsVersion) {
    throw FormatError("stylizer weights " + path.string() + " have format version " + std::to_string(version) +
                      ", this build reads version " + std::to_string(kWeightsVersion));
  }
  const EncoderArch arch = parse_encoder_arch(r.str());
  StylizerWeights weights = StylizerWeights::create(arch, 0);
  const auto enc_found = read_descriptors(r);
  const auto dec_found = read_descriptors(r);
  const std::string diff = descriptor_diff("encoder", weights.encoder().layer_descriptors(), enc_found) +
                           descriptor_diff("decoder", weights.decoder().layer_descriptors(), dec_found);
  if (!diff.empty()) {
    throw FormatError("stylizer weights " + path.string() + " do not match architecture " + to_string(arch) + ":" + diff);
  }
  auto params = weights.encoder_for_loading().parameters("encoder.");
  for (auto& p : weights.mutable_decoder().parameters("decoder.")) params.push_back(p);
  const auto count = r.u64();
  if (count != params.size()) {
    throw FormatError("stylizer weights " + path.string() + ": expected " + std::to_string(params.size()) +
                      " parameter tensors, found " + std::to_string(count));
  }
  for (auto& p : params) {
    const std::string name = r.str();
    if (name != p.name) throw FormatError("stylizer weights: expected parameter '" + p.name + "', found '" + name + "'");
    Tensor t = r.tensor();
    if (!t.same_shape(*p.value)) {
      throw FormatError("stylizer weights: parameter '" + name + "' has shape " + t.shape_string() + ", expected " +
                        p.value->shape_string());
    }
    *p.value = std::move(t);
  }
  if (!r.at_end()) throw FormatError("stylizer weights " + path.string() + ": trailing bytes after parameters");
  return weights;
}

StylizerWeights load_weights(const fs::path& path, EncoderArch expected) {
  StylizerWeights w = load_weights(path);
  if (w.arch() != expected) {
    throw FormatError("stylizer weights " + path.string() + " hold architecture " + to_string(w.arch()) +
                      ", expected " + to_string(expected));
  }
  return w;
}

}  // namespace styleaug::stylizer
