#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "styleaug/nn/layers.hpp"
#include "styleaug/rng.hpp"
#include "styleaug/tensor.hpp"

namespace styleaug::test_support {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 gen(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("styleaug_" + tag + "_" + std::to_string(gen()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline Tensor random_normal(std::vector<std::size_t> shape, Rng& rng, float scale = 1.0f, float shift = 0.0f) {
  Tensor t(std::move(shape));
  std::normal_distribution<float> d(shift, scale);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

// Central-difference derivative of a scalar function of a tensor entry.
inline double numeric_derivative(Tensor& t, std::size_t i, const std::function<double()>& f, double h = 1e-2) {
  const float saved = t[i];
  t[i] = static_cast<float>(saved + h);
  const double up = f();
  t[i] = static_cast<float>(saved - h);
  const double down = f();
  t[i] = saved;
  return (up - down) / (2 * h);
}

// Loss L = sum(w .* y) for a fixed random projection w; dL/dy = w.
struct Projection {
  Tensor weights;
  double operator()(const Tensor& y) const {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(weights[i]) * y[i];
    return s;
  }
};

}  // namespace styleaug::test_support
