#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "styleaug/data/dataset.hpp"
#include "styleaug/nn/layers.hpp"
#include "styleaug/tensor.hpp"

namespace styleaug::stylizer {

// Per-sample, per-channel spatial statistics of an N x C x H x W feature map.
struct ChannelStats {
  Tensor mean;  // N x C
  Tensor std;   // N x C, population form
};

// Guard added to the content std in the AdaIN division.
inline constexpr float kAdainEpsilon = 1e-5f;

ChannelStats instance_stats(const Tensor& features);

// Renormalizes each content channel to the style channel's mean and std:
//   out = std_s * (f_c - mean_c) / max(std_c, eps) + mean_s
// `style` may have batch size 1, in which case it applies to every sample.
Tensor adain_transform(const Tensor& content, const Tensor& style, float eps = kAdainEpsilon);

// Same, with precomputed statistics (style stats may have batch size 1).
Tensor adain_transform(const Tensor& content, const ChannelStats& content_stats, const ChannelStats& style_stats,
                       float eps = kAdainEpsilon);

enum class EncoderArch {
  cifar_small,   // 4 conv blocks, stride 4, for 32x32 inputs
  vgg_relu4_1,   // VGG-19 layout up to relu4_1 (official AdaIN encoder), stride 8
};

std::string to_string(EncoderArch arch);
EncoderArch parse_encoder_arch(const std::string& name);

inline constexpr std::uint32_t kWeightsVersion = 1;

// Frozen encoder + trainable decoder. Both operate on [0,1] RGB images.
class StylizerWeights {
 public:
  // Builds the architecture with seed-initialised parameters.
  static StylizerWeights create(EncoderArch arch, std::uint64_t seed);

  EncoderArch arch() const { return arch_; }
  std::uint32_t version() const { return version_; }
  const nn::Sequential& encoder() const { return encoder_; }
  const nn::Sequential& decoder() const { return decoder_; }
  nn::Sequential& mutable_decoder() { return decoder_; }
  // Write access for weight loading only; the encoder is never trained.
  nn::Sequential& encoder_for_loading() { return encoder_; }

  // Encoder layer indices whose outputs feed the style loss.
  const std::vector<std::size_t>& style_layers() const { return style_layers_; }
  // Encoder layer whose statistics form the texture descriptor (second block).
  std::size_t texture_layer() const { return texture_layer_; }
  std::size_t stride() const { return stride_; }
  std::size_t feature_channels() const { return feature_channels_; }

  // Throws ShapeError naming the minimum resolution when h x w cannot pass
  // through the encoder/decoder round trip.
  void check_resolution(std::size_t h, std::size_t w) const;

  Tensor encode(const Tensor& images01) const;
  Tensor decode(const Tensor& features) const;
  // Clamped Dec(Enc(x)).
  Tensor reconstruct(const Tensor& images01) const;

  std::uint64_t encoder_fingerprint() const;
  std::uint64_t decoder_fingerprint() const;

 private:
  StylizerWeights() = default;

  EncoderArch arch_ = EncoderArch::cifar_small;
  std::uint32_t version_ = kWeightsVersion;
  nn::Sequential encoder_, decoder_;
  std::vector<std::size_t> style_layers_;
  std::size_t texture_layer_ = 0, stride_ = 1, feature_channels_ = 0;
};

std::uint64_t fingerprint(const nn::Sequential& net);

// Dec(alpha * AdaIN(f_c, f_s) + (1 - alpha) * f_c) clamped to [0,1].
// content and style are [0,1] images of equal resolution; style batch is
// either equal to content's or 1.
Tensor stylize01(const Tensor& content01, const Tensor& style01, const StylizerWeights& weights, float alpha = 1.0f);

// stylize01(content, content[permutation]) with a single encoder pass.
Tensor stylize_permuted01(const Tensor& content01, std::span<const std::size_t> permutation,
                          const StylizerWeights& weights, float alpha = 1.0f);

// Normalized-batch form: denormalizes, stylizes, renormalizes. The result
// carries the content labels.
data::ImageBatch stylize(const data::ImageBatch& content, const data::ImageBatch& style,
                         const StylizerWeights& weights, float alpha = 1.0f);

// ------------------------------------------------------ decoder training

struct DecoderTrainingOptions {
  std::size_t steps = 0;
  double lr = 1e-4;
  double lr_decay = 5e-5;  // lr / (1 + decay * step)
  double style_weight = 10.0;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  std::size_t log_every = 10;
};

struct DecoderLossRecord {
  std::size_t step;
  double content_loss;
  double style_loss;
  double total;
};

struct DecoderTrainingResult {
  StylizerWeights weights;
  std::vector<DecoderLossRecord> curve;
};

// Raised when the loss turns non-finite; holds the last weights whose loss
// was finite.
class DecoderDivergence : public DivergenceError {
 public:
  DecoderDivergence(const std::string& msg, StylizerWeights last_good, std::vector<DecoderLossRecord> curve)
      : DivergenceError(msg), last_good_(std::move(last_good)), curve_(std::move(curve)) {}
  const StylizerWeights& last_good() const { return last_good_; }
  const std::vector<DecoderLossRecord>& curve() const { return curve_; }

 private:
  StylizerWeights last_good_;
  std::vector<DecoderLossRecord> curve_;
};

// Content loss: MSE(Enc(Dec(t)), t) with t = AdaIN(Enc(c), Enc(s)).
// Style loss: sum over style layers of MSE of instance means and stds.
// Content/style images are drawn from the dataset's train order.
DecoderTrainingResult train_decoder(const data::DatasetHandle& dataset, const StylizerWeights& weights,
                                    const DecoderTrainingOptions& options);

// Loss terms of one decoder step without updating anything; exposed for
// gradient checks.
struct DecoderLoss {
  double content = 0.0;
  double style = 0.0;
  Tensor decoder_output;
};
DecoderLoss decoder_loss(const StylizerWeights& weights, const Tensor& content01, const Tensor& style01,
                         double style_weight, std::vector<Tensor>* decoder_grads);

// ------------------------------------------------------------ weight files

void save_weights(const StylizerWeights& weights, const std::filesystem::path& path);
// Verifies magic, version and architecture; a descriptor mismatch lists the
// expected vs found layers.
StylizerWeights load_weights(const std::filesystem::path& path);
// As load_weights, additionally requiring a specific architecture.
StylizerWeights load_weights(const std::filesystem::path& path, EncoderArch expected);

}  // namespace styleaug::stylizer
