#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "styleaug/data/dataset.hpp"
#include "styleaug/rng.hpp"
#include "styleaug/stylizer.hpp"
#include "styleaug/targets.hpp"

namespace styleaug::augment {

enum class Mode { none, styleaugment, label_mix, mixup, cutmix, prestylized };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& s);
// Modes that append a stylized copy of every sample (2N out for N in).
bool doubles_batch(Mode mode);
bool needs_stylizer(Mode mode);

// Clean samples followed by their stylized copies.
struct AugmentedBatch {
  Tensor pixels;  // 2N x 3 x H x W, normalized
  std::vector<int> labels;
  std::vector<std::size_t> style_assignment;  // permutation of 0..N-1
  Mode mode = Mode::styleaugment;
  data::Normalization normalization;

  std::size_t size() const { return labels.size(); }
  // Hard targets for every sample.
  std::vector<MixTarget> targets() const;
};

// Uniform permutation used to pick in-batch style references. Fixed points
// are allowed.
std::vector<std::size_t> draw_style_permutation(std::size_t n, Rng& rng);

// stylized[i] = stylize(batch[i], batch[pi(i)]); output is concat(batch,
// stylized) with labels concat(labels, labels).
AugmentedBatch style_augment(const data::ImageBatch& batch, const stylizer::StylizerWeights& weights, Rng& rng,
                             float alpha = 1.0f);

// As style_augment with a caller-chosen permutation.
AugmentedBatch style_augment_with(const data::ImageBatch& batch, const stylizer::StylizerWeights& weights,
                                  std::span<const std::size_t> permutation, float alpha = 1.0f);

// Label-mixing ablation: clean samples keep hard targets; stylized sample i
// targets (labels[i], labels[pi(i)], lam).
std::pair<AugmentedBatch, std::vector<MixTarget>> style_augment_label_mix(const data::ImageBatch& batch,
                                                                        const stylizer::StylizerWeights& weights,
                                                                        Rng& rng, float lam, float alpha = 1.0f);

struct MixedBatch {
  data::ImageBatch batch;
  std::vector<MixTarget> targets;
};

double sample_beta(Rng& rng, double a, double b);

// x' = lam * x + (1 - lam) * x[perm]; targets (y, y[perm], lam).
MixedBatch mixup_with(const data::ImageBatch& batch, std::span<const std::size_t> perm, float lam);
MixedBatch mixup_batch(const data::ImageBatch& batch, Rng& rng, double beta_param = 1.0);

struct Box {
  std::size_t y0, x0, y1, x1;  // half-open [y0, y1) x [x0, x1)
  std::size_t area() const { return (y1 - y0) * (x1 - x0); }
};

// Pastes box of x[perm] into x; lambda = 1 - box area / image area.
MixedBatch cutmix_with(const data::ImageBatch& batch, std::span<const std::size_t> perm, const Box& box);
MixedBatch cutmix_batch(const data::ImageBatch& batch, Rng& rng, double beta_param = 1.0);

// One static stylization per training image, written to
// out_dir/train/<class>/<index>.png plus out_dir/manifest.json.
struct PrestylizeResult {
  data::DatasetHandle dataset;          // stylized images, original labels/normalization
  std::vector<std::size_t> style_ids;   // per handle position
  std::vector<std::string> style_files;
};

PrestylizeResult prestylize_dataset(const data::DatasetHandle& dataset, const std::filesystem::path& style_folder,
                                    const stylizer::StylizerWeights& weights, const std::filesystem::path& out_dir,
                                    std::uint64_t seed, float alpha = 1.0f);

}  // namespace styleaug::augment
