#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "styleaug/error.hpp"

namespace styleaug {

// Dense row-major float tensor. Image data is always laid out N x C x H x W;
// parameters use whatever rank they need (conv weights are rank 4, biases rank 1).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, float fill = 0.0f)
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) {
      throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string());
    }
  }

  static Tensor nchw(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                     float fill = 0.0f) {
    return Tensor({n, c, h, w}, fill);
  }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0f); }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // NCHW accessors; only meaningful for rank-4 tensors.
  std::size_t n() const { return shape_.at(0); }
  std::size_t c() const { return shape_.at(1); }
  std::size_t h() const { return shape_.at(2); }
  std::size_t w() const { return shape_.at(3); }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  std::vector<float>& storage() noexcept { return data_; }
  const std::vector<float>& storage() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  float& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  float at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  // Contiguous view of one sample (all of C x H x W for sample i).
  std::span<float> sample(std::size_t i) {
    const std::size_t stride = data_.size() / shape_.at(0);
    return {data_.data() + i * stride, stride};
  }
  std::span<const float> sample(std::size_t i) const {
    const std::size_t stride = data_.size() / shape_.at(0);
    return {data_.data() + i * stride, stride};
  }

  // Contiguous view of plane (n, c).
  std::span<float> plane(std::size_t n, std::size_t c) {
    const std::size_t hw = shape_[2] * shape_[3];
    return {data_.data() + (n * shape_[1] + c) * hw, hw};
  }
  std::span<const float> plane(std::size_t n, std::size_t c) const {
    const std::size_t hw = shape_[2] * shape_[3];
    return {data_.data() + (n * shape_[1] + c) * hw, hw};
  }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(std::vector<std::size_t> shape) const {
    if (count(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string() + " to " + to_string(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }

  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  std::string shape_string() const { return to_string(shape_); }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
  }

  static std::string to_string(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

  void require_same_shape(const Tensor& o, const char* what) const {
    if (shape_ != o.shape_) {
      throw ShapeError(std::string(what) + ": shape mismatch " + shape_string() + " vs " +
                       o.shape_string());
    }
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<float> data_;
};

// Concatenate rank-4 tensors along the batch dimension.
inline Tensor concat_batch(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.c() != b.c() || a.h() != b.h() || a.w() != b.w()) {
    throw ShapeError("concat_batch: incompatible shapes " + a.shape_string() + " and " +
                     b.shape_string());
  }
  std::vector<float> data;
  data.reserve(a.size() + b.size());
  data.insert(data.end(), a.storage().begin(), a.storage().end());
  data.insert(data.end(), b.storage().begin(), b.storage().end());
  return Tensor({a.n() + b.n(), a.c(), a.h(), a.w()}, std::move(data));
}

// Gather samples of a rank-4 tensor by index.
inline Tensor gather_batch(const Tensor& t, std::span<const std::size_t> index) {
  Tensor out({index.size(), t.c(), t.h(), t.w()});
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto src = t.sample(index[i]);
    std::copy(src.begin(), src.end(), out.sample(i).begin());
  }
  return out;
}

}  // namespace styleaug
