#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "styleaug/augment.hpp"
#include "styleaug/data/dataset.hpp"
#include "styleaug/nn/layers.hpp"
#include "styleaug/stylizer.hpp"

namespace styleaug::trainer {

enum class Arch { resnet18, small_resnet_cifar };
enum class OptimizerKind { sgd_momentum, adam };

std::string to_string(Arch arch);
std::string to_string(OptimizerKind kind);
Arch parse_arch(const std::string& s);
OptimizerKind parse_optimizer(const std::string& s);

// Image classifier. resnet18 uses the 3x3 stem without max-pool at
// resolutions up to 64 and the ImageNet 7x7/2 stem + max-pool above.
// small_resnet_cifar is a 16-32-64 wide, two-blocks-per-stage variant.
class Classifier {
 public:
  Classifier(Arch arch, std::size_t num_classes, std::size_t resolution, std::uint64_t seed);

  Arch arch() const { return arch_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t resolution() const { return resolution_; }
  nn::Sequential& net() { return net_; }
  const nn::Sequential& net() const { return net_; }

  // Logits (N x classes) in inference mode.
  Tensor logits(const Tensor& x) const;
  std::vector<int> predict(const Tensor& x, std::size_t chunk = 256) const;

  std::uint64_t fingerprint() const;

 private:
  Arch arch_;
  std::size_t num_classes_, resolution_;
  nn::Sequential net_;
};

struct TrainConfig {
  Arch arch = Arch::small_resnet_cifar;
  std::size_t epochs = 1;
  std::size_t batch_size = 128;  // inputs per optimizer step
  double base_lr = 0.1;
  OptimizerKind optimizer = OptimizerKind::sgd_momentum;
  std::string schedule = "cosine";
  augment::Mode augment_mode = augment::Mode::none;
  float alpha = 1.0f;
  std::uint64_t seed = 0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  float label_mix_lambda = 0.5f;
  double mix_beta = 1.0;

  // Dataset selection; used by the CLI and recorded in the config hash.
  std::string dataset = "cifar10";  // cifar10 | folder | synthetic
  std::string data_root;
  std::size_t resolution = 32;
  std::size_t train_subset = 0;  // 0 = whole split
  std::size_t synthetic_size = 512;
  std::size_t synthetic_classes = 10;
  std::string stylizer_weights;

  // Throws ConfigError on any invariant violation.
  void validate() const;
  nlohmann::json to_json() const;
  // Unknown keys are rejected; missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
  // FNV-1a of the canonical JSON without data_root, hex encoded.
  std::string hash() const;
};

// base_lr * (1 + cos(pi * step / total_steps)) / 2
double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr);

struct MetricRecord {
  std::string type;  // "step" or "epoch"
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double train_acc = 0.0;  // epoch records only
  std::size_t samples = 0;   // dataset samples consumed by this step (step records)
  std::size_t inputs = 0;    // inputs backpropagated by this step (step records)

  nlohmann::json to_json() const;
  static MetricRecord from_json(const nlohmann::json& j);
};

std::string metrics_to_jsonl(const std::vector<MetricRecord>& log);
std::vector<MetricRecord> metrics_from_jsonl(const std::string& text);

struct TrainOptions {
  // Directory for epoch checkpoints (empty: none written).
  std::filesystem::path checkpoint_dir;
  std::size_t checkpoint_every = 1;
  // Stop after this many completed epochs (0: run to config.epochs). The
  // schedule still spans config.epochs, so a later resume continues it.
  std::size_t stop_after_epoch = 0;
  // Called after each step record is appended.
  std::function<void(const MetricRecord&)> on_record;
  // Called once per step with the storage indices of the clean samples and,
  // in stylizing modes, the storage index of each sample's style reference
  // (empty otherwise).
  std::function<void(std::size_t epoch, std::size_t step, const std::vector<std::size_t>& content,
                     const std::vector<std::size_t>& style)>
      on_assignment;
  // Optional dataset for prestylized mode (replaces the clean train set).
  const data::DatasetHandle* prestylized = nullptr;
};

struct TrainResult {
  Classifier model;
  std::vector<MetricRecord> log;
  std::size_t epochs_completed = 0;
};

// Clean samples drawn per optimizer step for a mode.
std::size_t clean_per_step(const TrainConfig& config);

TrainResult train(const TrainConfig& config, const data::DatasetHandle& train_set,
                  const stylizer::StylizerWeights* stylizer, const TrainOptions& options = {});

// --------------------------------------------------------------- checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  std::string config_hash;
  std::size_t epochs_completed = 0;
  std::size_t global_step = 0;
  std::string rng_state;  // trainer stream state at the epoch boundary
  std::vector<Tensor> parameters;
  std::vector<Tensor> buffers;
  std::string optimizer;
  std::uint64_t optimizer_steps = 0;
  std::vector<Tensor> optimizer_state;
  std::vector<MetricRecord> log;
  std::size_t num_classes = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rebuilds the classifier stored in a checkpoint.
Classifier classifier_from_checkpoint(const Checkpoint& ckpt);

// Continues training from `ckpt`. Refuses (ConfigError) when the config hash
// differs from the checkpoint's.
TrainResult resume(const Checkpoint& ckpt, const TrainConfig& config, const data::DatasetHandle& train_set,
                   const stylizer::StylizerWeights* stylizer, const TrainOptions& options = {});

}  // namespace styleaug::trainer
