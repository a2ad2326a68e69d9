#include "styleaug/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace styleaug::data {

namespace {

// Signed "inside" test for shape `cls` at normalized offset (u, v) in [-1,1].
bool inside(std::size_t cls, double u, double v) {
  const double r = std::hypot(u, v);
  switch (cls % 10) {
    case 0: return r < 0.8;                                         // disk
    case 1: return std::abs(u) < 0.7 && std::abs(v) < 0.7;          // square
    case 2: return v > -0.7 && v < 0.7 && std::abs(u) < (0.7 - v) * 0.6;  // triangle
    case 3: return r > 0.4 && r < 0.85;                             // ring
    case 4: return std::abs(u) < 0.25 || std::abs(v) < 0.25;        // plus
    case 5: return std::abs(u - v) < 0.3 || std::abs(u + v) < 0.3;  // cross
    case 6: return std::abs(u) < 0.85 && std::abs(v) < 0.3;         // bar
    case 7: return std::abs(u) + std::abs(v) < 0.85;                // diamond
    case 8: return r < 0.85 && v > 0.0;                             // half disk
    default: return std::abs(u) < 0.3 && std::abs(v) < 0.85;        // column
  }
}

void draw(std::vector<std::uint8_t>& out, std::size_t res, std::size_t cls, Rng& rng) {
  auto u01 = [&] { return uniform01(rng); };
  double fg[3], bg0[3], bg1[3];
  for (int c = 0; c < 3; ++c) {
    fg[c] = u01();
    bg0[c] = u01();
    bg1[c] = u01();
  }
  const double cx = (u01() - 0.5) * 0.3, cy = (u01() - 0.5) * 0.3;
  const double scale = 0.75 + 0.25 * u01();
  const double grad_angle = u01() * 2.0 * std::numbers::pi;
  const double tex_freq = 2.0 + 6.0 * u01();
  const double tex_angle = u01() * std::numbers::pi;
  const double tex_amp = 0.15 * u01();
  const double half = static_cast<double>(res) / 2.0;
  for (std::size_t y = 0; y < res; ++y) {
    for (std::size_t x = 0; x < res; ++x) {
      const double px = (static_cast<double>(x) + 0.5 - half) / half;
      const double py = (static_cast<double>(y) + 0.5 - half) / half;
      const double t = 0.5 + 0.5 * (px * std::cos(grad_angle) + py * std::sin(grad_angle)) / std::numbers::sqrt2;
      const double tex = tex_amp * std::sin(tex_freq * std::numbers::pi *
                                            (px * std::cos(tex_angle) + py * std::sin(tex_angle)));
      const bool in = inside(cls, (px - cx) / scale, (py - cy) / scale);
      for (std::size_t c = 0; c < 3; ++c) {
        double v = in ? fg[c] : bg0[c] * (1.0 - t) + bg1[c] * t;
        v += tex + 0.03 * (u01() - 0.5);
        out[(c * res + y) * res + x] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }
}

std::shared_ptr<DatasetStorage> generate(std::size_t count, std::size_t res, std::size_t num_classes, Split split,
                                         std::uint64_t seed) {
  auto storage = std::make_shared<DatasetStorage>();
  storage->height = storage->width = res;
  for (std::size_t c = 0; c < num_classes; ++c) storage->class_names.push_back("shape" + std::to_string(c));
  storage->source = "synthetic:" + std::to_string(seed) + ":" + to_string(split);
  storage->pixels.resize(count * 3 * res * res);
  storage->labels.resize(count);
  std::vector<std::uint8_t> img(3 * res * res);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, Stream::init, split == Split::train ? 100 : 200, i);
    const std::size_t cls = i % num_classes;
    draw(img, res, cls, rng);
    std::copy(img.begin(), img.end(), storage->pixels.begin() + static_cast<long>(i * img.size()));
    storage->labels[i] = static_cast<int>(cls);
  }
  return storage;
}

}  // namespace

DatasetHandle make_synthetic(std::size_t count, std::size_t resolution, std::size_t num_classes, Split split,
                             std::uint64_t seed) {
  if (num_classes == 0 || resolution == 0) throw ConfigError("synthetic dataset needs classes and resolution");
  auto storage = generate(count, resolution, num_classes, split, seed);
  Normalization norm = split == Split::train
                           ? compute_normalization(*storage)
                           : compute_normalization(*generate(std::max<std::size_t>(count, 256), resolution,
                                                             num_classes, Split::train, seed));
  return DatasetHandle(std::move(storage), split, norm, seed);
}

}  // namespace styleaug::data
