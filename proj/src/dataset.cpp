#include "styleaug/data/dataset.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "styleaug/data/image_io.hpp"
#include "styleaug/log.hpp"

namespace styleaug::data {

namespace fs = std::filesystem;

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train or test)");
}

// ---------------------------------------------------------- Normalization

void Normalization::normalize_inplace(Tensor& x) const {
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c)
      for (auto& v : x.plane(n, c)) v = (v - mean[c]) / std[c];
}

void Normalization::denormalize_inplace(Tensor& x) const {
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c)
      for (auto& v : x.plane(n, c)) v = v * std[c] + mean[c];
}

Tensor Normalization::normalize(const Tensor& x01) const {
  Tensor t = x01;
  normalize_inplace(t);
  return t;
}

Tensor Normalization::denormalize(const Tensor& x) const {
  Tensor t = x;
  denormalize_inplace(t);
  return t;
}

void ImageBatch::validate(std::size_t num_classes) const {
  if (pixels.rank() != 4 || pixels.c() != 3) throw ShapeError("image batch must be N x 3 x H x W, got " + pixels.shape_string());
  if (pixels.n() != labels.size()) throw ShapeError("image batch: pixel/label count mismatch");
  if (!pixels.all_finite()) throw ShapeError("image batch: non-finite pixel");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) throw ShapeError("image batch: label " + std::to_string(l) + " out of range");
  }
}

Normalization compute_normalization(const DatasetStorage& storage) {
  Normalization norm;
  const std::size_t hw = storage.height * storage.width;
  if (storage.size() == 0 || hw == 0) return norm;
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < storage.size(); ++i) {
      const std::uint8_t* p = storage.pixels.data() + i * storage.image_bytes() + c * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        const double v = p[j] / 255.0;
        sum += v;
        sq += v * v;
      }
    }
    const double count = static_cast<double>(storage.size() * hw);
    const double mu = sum / count;
    const double var = std::max(sq / count - mu * mu, 0.0);
    norm.mean[c] = static_cast<float>(mu);
    // Constant images would give std 0; fall back to 1 to keep the map invertible.
    norm.std[c] = var > 1e-12 ? static_cast<float>(std::sqrt(var)) : 1.0f;
  }
  return norm;
}

// --------------------------------------------------------- DatasetHandle

DatasetHandle::DatasetHandle(std::shared_ptr<const DatasetStorage> storage, Split split, Normalization norm,
                             std::uint64_t seed)
    : storage_(std::move(storage)), split_(split), norm_(norm), seed_(seed) {
  active_.resize(storage_->size());
  std::iota(active_.begin(), active_.end(), std::size_t{0});
}

std::vector<int> DatasetHandle::labels() const {
  std::vector<int> out(active_.size());
  for (std::size_t i = 0; i < active_.size(); ++i) out[i] = storage_->labels[active_[i]];
  return out;
}

Tensor DatasetHandle::images01(std::span<const std::size_t> positions) const {
  const std::size_t bytes = storage_->image_bytes();
  Tensor out({positions.size(), 3, storage_->height, storage_->width});
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const std::uint8_t* src = storage_->pixels.data() + active_.at(positions[i]) * bytes;
    float* dst = out.sample(i).data();
    for (std::size_t j = 0; j < bytes; ++j) dst[j] = static_cast<float>(src[j]) / 255.0f;
  }
  return out;
}

ImageBatch DatasetHandle::batch(std::span<const std::size_t> positions) const {
  ImageBatch b;
  b.pixels = images01(positions);
  norm_.normalize_inplace(b.pixels);
  b.normalization = norm_;
  for (auto p : positions) {
    b.labels.push_back(label(p));
    b.indices.push_back(active_.at(p));
  }
  return b;
}

DatasetHandle DatasetHandle::with_seed(std::uint64_t seed) const {
  DatasetHandle h = *this;
  h.seed_ = seed;
  return h;
}

DatasetHandle DatasetHandle::with_normalization(const Normalization& norm) const {
  DatasetHandle h = *this;
  h.norm_ = norm;
  return h;
}

DatasetHandle DatasetHandle::subset(std::size_t count, std::uint64_t subset_seed) const {
  if (count >= active_.size()) return *this;
  Rng rng = make_rng(subset_seed, Stream::subset);
  auto perm = random_permutation(active_.size(), rng);
  perm.resize(count);
  std::sort(perm.begin(), perm.end());
  DatasetHandle h = *this;
  h.active_.clear();
  for (auto p : perm) h.active_.push_back(active_[p]);
  return h;
}

DatasetHandle DatasetHandle::head(std::size_t count) const {
  DatasetHandle h = *this;
  if (count < h.active_.size()) h.active_.resize(count);
  return h;
}

DatasetHandle from_images(std::vector<std::uint8_t> pixels, std::vector<int> labels,
                          std::vector<std::string> class_names, std::size_t height, std::size_t width,
                          Split split, std::optional<Normalization> norm, std::uint64_t seed) {
  auto storage = std::make_shared<DatasetStorage>();
  storage->height = height;
  storage->width = width;
  storage->pixels = std::move(pixels);
  storage->labels = std::move(labels);
  storage->class_names = std::move(class_names);
  storage->source = "memory";
  if (storage->pixels.size() != storage->labels.size() * storage->image_bytes()) {
    throw ShapeError("from_images: pixel buffer does not match label count");
  }
  for (int l : storage->labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= storage->class_names.size()) throw ShapeError("from_images: label out of range");
  }
  const Normalization n = norm ? *norm : compute_normalization(*storage);
  return DatasetHandle(std::move(storage), split, n, seed);
}

// ---------------------------------------------------------------- CIFAR

namespace {

const std::vector<std::string> kCifarClasses = {"airplane", "automobile", "bird", "cat", "deer",
                                                "dog", "frog", "horse", "ship", "truck"};

std::vector<std::string> cifar_files(Split split) {
  if (split == Split::test) return {"test_batch.bin"};
  return {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"};
}

fs::path cifar_dir(const fs::path& root) {
  if (fs::exists(root / "cifar-10-batches-bin" / "test_batch.bin") ||
      fs::exists(root / "cifar-10-batches-bin" / "data_batch_1.bin")) {
    return root / "cifar-10-batches-bin";
  }
  return root;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

// Parses sha256sum output ("<hex>  <name>" per line).
std::map<std::string, std::string> read_checksums(const fs::path& file) {
  std::map<std::string, std::string> out;
  std::ifstream in(file);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string hash, name;
    if (ls >> hash >> name) {
      if (!name.empty() && name[0] == '*') name.erase(0, 1);
      out[fs::path(name).filename().string()] = hash;
    }
  }
  return out;
}

void read_cifar_file(const fs::path& path, DatasetStorage& storage) {
  if (!fs::exists(path)) throw IngestionError("CIFAR-10 file missing: " + path.string());
  const auto bytes = fs::file_size(path);
  if (bytes == 0 || bytes % kCifarRecordBytes != 0) {
    throw IngestionError("CIFAR-10 file corrupt (size " + std::to_string(bytes) + " is not a multiple of " +
                         std::to_string(kCifarRecordBytes) + "): " + path.string());
  }
  const std::size_t records = bytes / kCifarRecordBytes;
  if (records != kCifarImages) {
    log_warning("CIFAR-10 file " + path.string() + " holds " + std::to_string(records) + " records, expected " +
                std::to_string(kCifarImages));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open CIFAR-10 file: " + path.string());
  std::vector<std::uint8_t> record(kCifarRecordBytes);
  for (std::size_t r = 0; r < records; ++r) {
    in.read(reinterpret_cast<char*>(record.data()), static_cast<std::streamsize>(record.size()));
    if (!in) throw IngestionError("CIFAR-10 file truncated: " + path.string());
    if (record[0] > 9) {
      throw IngestionError("CIFAR-10 file corrupt (label " + std::to_string(record[0]) + " in record " +
                           std::to_string(r) + "): " + path.string());
    }
    storage.labels.push_back(record[0]);
    storage.pixels.insert(storage.pixels.end(), record.begin() + 1, record.end());
  }
}

std::shared_ptr<DatasetStorage> read_cifar_split(const fs::path& dir, Split split) {
  auto storage = std::make_shared<DatasetStorage>();
  storage->height = storage->width = 32;
  storage->class_names = kCifarClasses;
  storage->source = "cifar10:" + dir.string() + ":" + to_string(split);
  const auto checksum_file = dir / "checksums.txt";
  const auto checksums = fs::exists(checksum_file) ? read_checksums(checksum_file) : std::map<std::string, std::string>{};
  for (const auto& name : cifar_files(split)) {
    const auto path = dir / name;
    read_cifar_file(path, *storage);
    if (auto it = checksums.find(name); it != checksums.end()) {
      const auto actual = sha256_file(path);
      if (actual != it->second) {
        log_warning("checksum mismatch for " + path.string() + ": expected " + it->second + ", found " + actual);
      }
    }
  }
  return storage;
}

}  // namespace

DatasetHandle load_cifar10(const fs::path& root, Split split, std::uint64_t seed) {
  if (!fs::is_directory(root)) throw IngestionError("CIFAR-10 root is not a directory: " + root.string());
  const fs::path dir = cifar_dir(root);
  auto storage = read_cifar_split(dir, split);
  Normalization norm;
  if (split == Split::train) {
    norm = compute_normalization(*storage);
  } else {
    norm = compute_normalization(*read_cifar_split(dir, Split::train));
  }
  return DatasetHandle(std::move(storage), split, norm, seed);
}

// ---------------------------------------------------------- image folder

namespace {

std::shared_ptr<DatasetStorage> read_folder_split(const fs::path& split_dir, std::size_t res) {
  if (!fs::is_directory(split_dir)) throw IngestionError("image folder split not found: " + split_dir.string());
  std::vector<std::string> classes;
  for (const auto& entry : fs::directory_iterator(split_dir)) {
    if (entry.is_directory()) classes.push_back(entry.path().filename().string());
  }
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw IngestionError("image folder has no class directories: " + split_dir.string());
  auto storage = std::make_shared<DatasetStorage>();
  storage->height = storage->width = res;
  storage->class_names = classes;
  storage->source = "folder:" + split_dir.string();
  for (std::size_t c = 0; c < classes.size(); ++c) {
    for (const auto& file : list_images(split_dir / classes[c])) {
      auto img = read_image_rgb(file, res);
      if (!img) {
        ++storage->skipped_files;
        log_warning("skipping unreadable image " + file.string());
        continue;
      }
      storage->pixels.insert(storage->pixels.end(), img->begin(), img->end());
      storage->labels.push_back(static_cast<int>(c));
    }
  }
  if (storage->skipped_files) {
    log_warning(std::to_string(storage->skipped_files) + " unreadable image(s) skipped under " + split_dir.string());
  }
  return storage;
}

}  // namespace

DatasetHandle load_image_folder(const fs::path& root, Split split, std::size_t resolution, std::uint64_t seed) {
  if (!fs::is_directory(root)) throw IngestionError("image folder root not found: " + root.string());
  if (resolution == 0) throw ConfigError("image folder resolution must be positive");
  auto storage = read_folder_split(root / to_string(split), resolution);
  Normalization norm;
  if (split == Split::train) {
    norm = compute_normalization(*storage);
  } else if (fs::is_directory(root / "train")) {
    norm = compute_normalization(*read_folder_split(root / "train", resolution));
  } else {
    log_warning("no train split under " + root.string() + "; normalizing with test-split statistics");
    norm = compute_normalization(*storage);
  }
  return DatasetHandle(std::move(storage), split, norm, seed);
}

// ------------------------------------------------------------- iteration

void geometric_augment(Tensor& images, Rng& rng) {
  const std::size_t h = images.h(), w = images.w();
  const long pad = static_cast<long>(std::max<std::size_t>(1, std::min(h, w) / 8));
  std::vector<float> tmp(h * w);
  for (std::size_t s = 0; s < images.n(); ++s) {
    const long dy = static_cast<long>(uniform_below(rng, static_cast<std::uint64_t>(2 * pad + 1))) - pad;
    const long dx = static_cast<long>(uniform_below(rng, static_cast<std::uint64_t>(2 * pad + 1))) - pad;
    const bool flip = uniform_below(rng, 2) == 1;
    for (std::size_t c = 0; c < images.c(); ++c) {
      auto plane = images.plane(s, c);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          // Crop window from the reflection-padded image, then optional flip.
          long sy = static_cast<long>(y) + dy;
          long sx = static_cast<long>(flip ? w - 1 - x : x) + dx;
          if (sy < 0) sy = -sy;
          if (sy >= static_cast<long>(h)) sy = 2 * static_cast<long>(h) - 2 - sy;
          if (sx < 0) sx = -sx;
          if (sx >= static_cast<long>(w)) sx = 2 * static_cast<long>(w) - 2 - sx;
          sy = std::clamp<long>(sy, 0, static_cast<long>(h) - 1);
          sx = std::clamp<long>(sx, 0, static_cast<long>(w) - 1);
          tmp[y * w + x] = plane[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
        }
      }
      std::copy(tmp.begin(), tmp.end(), plane.begin());
    }
  }
}

std::vector<std::size_t> epoch_order(const DatasetHandle& handle, std::uint64_t epoch) {
  if (handle.split() == Split::test) {
    std::vector<std::size_t> order(handle.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    return order;
  }
  Rng rng = make_rng(handle.seed(), Stream::shuffle, epoch);
  return random_permutation(handle.size(), rng);
}

namespace {

std::optional<ImageBatch> make_batch(const DatasetHandle& handle, const std::vector<std::size_t>& order,
                                     std::size_t batch_size, std::uint64_t epoch, std::size_t step) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  const std::size_t begin = step * batch_size;
  if (begin >= order.size()) return std::nullopt;
  const bool train = handle.split() == Split::train;
  const std::size_t end = std::min(order.size(), begin + batch_size);
  if (train && end - begin < batch_size) return std::nullopt;
  std::span<const std::size_t> positions(order.data() + begin, end - begin);
  ImageBatch b;
  b.pixels = handle.images01(positions);
  if (train) {
    Rng rng = make_rng(handle.seed(), Stream::geometric, epoch, step);
    geometric_augment(b.pixels, rng);
  }
  handle.normalization().normalize_inplace(b.pixels);
  b.normalization = handle.normalization();
  for (auto p : positions) {
    b.labels.push_back(handle.label(p));
    b.indices.push_back(handle.storage_index(p));
  }
  return b;
}

}  // namespace

std::optional<ImageBatch> next_batch(const DatasetHandle& handle, std::size_t batch_size, std::uint64_t epoch,
                                     std::size_t step) {
  return make_batch(handle, epoch_order(handle, epoch), batch_size, epoch, step);
}

BatchIterator::BatchIterator(const DatasetHandle& handle, std::size_t batch_size, std::uint64_t epoch)
    : handle_(handle), batch_size_(batch_size), epoch_(epoch), order_(epoch_order(handle, epoch)) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
}

std::size_t BatchIterator::steps() const {
  if (handle_.split() == Split::train) return order_.size() / batch_size_;
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

std::optional<ImageBatch> BatchIterator::next() {
  auto b = make_batch(handle_, order_, batch_size_, epoch_, step_);
  if (b) ++step_;
  return b;
}

void write_cifar_batches(const DatasetHandle& handle, const fs::path& dir) {
  if (handle.height() != 32 || handle.width() != 32) throw ShapeError("CIFAR layout requires 32x32 images");
  fs::create_directories(dir);
  const auto files = cifar_files(handle.split());
  const std::size_t per_file = (handle.size() + files.size() - 1) / files.size();
  const auto& storage = handle.storage();
  std::size_t pos = 0;
  for (const auto& name : files) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / name).string());
    for (std::size_t k = 0; k < per_file && pos < handle.size(); ++k, ++pos) {
      const auto idx = handle.storage_index(pos);
      const auto label = static_cast<char>(storage.labels[idx]);
      out.write(&label, 1);
      out.write(reinterpret_cast<const char*>(storage.pixels.data() + idx * storage.image_bytes()),
                static_cast<std::streamsize>(storage.image_bytes()));
    }
  }
}

}  // namespace styleaug::data
