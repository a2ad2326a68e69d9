#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "styleaug/rng.hpp"
#include "styleaug/tensor.hpp"

namespace styleaug::data {

enum class Split { train, test };

std::string to_string(Split split);
Split parse_split(const std::string& s);

// Per-channel affine map between [0,1] pixels and network inputs.
struct Normalization {
  std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
  std::array<float, 3> std{1.0f, 1.0f, 1.0f};

  Tensor normalize(const Tensor& x01) const;
  Tensor denormalize(const Tensor& x) const;
  void normalize_inplace(Tensor& x01) const;
  void denormalize_inplace(Tensor& x) const;
  // Normalized value of a [0,1] pixel value v in channel c.
  float map(std::size_t c, float v) const { return (v - mean[c]) / std[c]; }

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

// A batch of normalized images with labels. `indices` are dataset indices
// of the samples (empty for synthesized samples).
struct ImageBatch {
  Tensor pixels;  // N x 3 x H x W, normalized
  std::vector<int> labels;
  std::vector<std::size_t> indices;
  Normalization normalization;

  std::size_t size() const { return labels.size(); }
  // Throws ShapeError when any batch invariant is violated.
  void validate(std::size_t num_classes) const;
};

// Decoded image data shared between handles.
struct DatasetStorage {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // N x 3 x H x W
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::string source;
  std::size_t skipped_files = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t image_bytes() const { return 3 * height * width; }
};

// Read-only view over a dataset split. Iteration order is a pure function of
// (seed, epoch).
class DatasetHandle {
 public:
  DatasetHandle(std::shared_ptr<const DatasetStorage> storage, Split split, Normalization norm,
                std::uint64_t seed = 0);

  Split split() const { return split_; }
  std::size_t size() const { return active_.size(); }
  std::size_t num_classes() const { return storage_->class_names.size(); }
  std::size_t height() const { return storage_->height; }
  std::size_t width() const { return storage_->width; }
  const Normalization& normalization() const { return norm_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::string>& class_names() const { return storage_->class_names; }
  const DatasetStorage& storage() const { return *storage_; }
  std::size_t skipped_files() const { return storage_->skipped_files; }

  int label(std::size_t i) const { return storage_->labels[active_.at(i)]; }
  std::vector<int> labels() const;
  // Position i within this handle -> index into the underlying storage.
  std::size_t storage_index(std::size_t i) const { return active_.at(i); }

  // [0,1] image tensor for the given handle positions.
  Tensor images01(std::span<const std::size_t> positions) const;
  // Normalized batch (no augmentation) for the given positions.
  ImageBatch batch(std::span<const std::size_t> positions) const;

  DatasetHandle with_seed(std::uint64_t seed) const;
  DatasetHandle with_normalization(const Normalization& norm) const;
  // Deterministic subset: the first `count` positions of a seeded permutation,
  // kept in ascending order.
  DatasetHandle subset(std::size_t count, std::uint64_t subset_seed) const;
  DatasetHandle head(std::size_t count) const;

 private:
  std::shared_ptr<const DatasetStorage> storage_;
  Split split_;
  Normalization norm_;
  std::uint64_t seed_;
  std::vector<std::size_t> active_;
};

// Per-channel mean/std of [0,1] pixels over a whole storage.
Normalization compute_normalization(const DatasetStorage& storage);

inline constexpr std::size_t kCifarImages = 10000;
inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * 32 * 32;

// CIFAR-10 binary layout: data_batch_1..5.bin + test_batch.bin either in
// `root` or in `root/cifar-10-batches-bin`. Normalization always comes from
// the train files. An optional sha256sum-format `checksums.txt` next to the
// batch files is verified, with mismatches reported as warnings.
DatasetHandle load_cifar10(const std::filesystem::path& root, Split split, std::uint64_t seed = 0);

// root/<split>/<class_name>/<image files>; classes sorted lexicographically;
// images resized (shorter side) and center-cropped to resolution x resolution.
DatasetHandle load_image_folder(const std::filesystem::path& root, Split split, std::size_t resolution,
                                std::uint64_t seed = 0);

// In-memory dataset, used for synthetic data and tests.
DatasetHandle from_images(std::vector<std::uint8_t> pixels, std::vector<int> labels,
                          std::vector<std::string> class_names, std::size_t height, std::size_t width,
                          Split split, std::optional<Normalization> norm = std::nullopt,
                          std::uint64_t seed = 0);

// Random crop with reflection padding and horizontal flip, applied per sample
// to a [0,1] batch. Pad is 4 pixels at 32x32 and scales as resolution / 8.
void geometric_augment(Tensor& images01, Rng& rng);

// Batches of one epoch. Train split: seeded shuffle + geometric augmentation,
// last incomplete batch dropped. Test split: storage order, no augmentation,
// last batch kept.
class BatchIterator {
 public:
  BatchIterator(const DatasetHandle& handle, std::size_t batch_size, std::uint64_t epoch);

  std::optional<ImageBatch> next();
  std::size_t steps() const;
  std::size_t step() const { return step_; }
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const DatasetHandle& handle_;
  std::size_t batch_size_;
  std::uint64_t epoch_;
  std::size_t step_ = 0;
  std::vector<std::size_t> order_;
};

// Sample order of one epoch (positions within the handle).
std::vector<std::size_t> epoch_order(const DatasetHandle& handle, std::uint64_t epoch);

// Stateless batch access: batch `step` of epoch `epoch`; nullopt past the end.
std::optional<ImageBatch> next_batch(const DatasetHandle& handle, std::size_t batch_size, std::uint64_t epoch,
                                     std::size_t step);

// Writes `handle` in CIFAR-10 binary layout (used to build test fixtures and
// materialize subsets). Train split goes to data_batch_1..5, test to test_batch.
void write_cifar_batches(const DatasetHandle& handle, const std::filesystem::path& dir);

}  // namespace styleaug::data
