#include "styleaug/corruptions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace styleaug::corruptions {

namespace {

constexpr std::array<std::array<double, 5>, 8> kTable = {{
    {0.04, 0.08, 0.12, 0.16, 0.20},  // gaussian_noise
    {500, 250, 100, 50, 25},         // shot_noise
    {1, 2, 3, 4, 6},                 // defocus_blur
    {3, 5, 7, 9, 13},                // motion_blur
    {0.15, 0.30, 0.45, 0.60, 0.75},  // fog
    {0.1, 0.2, 0.3, 0.4, 0.5},       // brightness
    {0.75, 0.6, 0.45, 0.3, 0.15},    // contrast
    {0.8, 0.65, 0.5, 0.4, 0.3},      // pixelate
}};

long reflect(long i, long n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

// Square kernel of odd side, applied per channel with reflected borders.
void convolve(std::span<float> plane, std::size_t h, std::size_t w, const std::vector<double>& kernel,
              std::size_t side) {
  const long r = static_cast<long>(side / 2);
  std::vector<float> out(plane.size());
  for (long y = 0; y < static_cast<long>(h); ++y) {
    for (long x = 0; x < static_cast<long>(w); ++x) {
      double acc = 0.0;
      for (long ky = -r; ky <= r; ++ky) {
        const long sy = reflect(y + ky, static_cast<long>(h));
        for (long kx = -r; kx <= r; ++kx) {
          const double k = kernel[static_cast<std::size_t>((ky + r) * static_cast<long>(side) + kx + r)];
          if (k == 0.0) continue;
          acc += k * plane[static_cast<std::size_t>(sy * static_cast<long>(w) + reflect(x + kx, static_cast<long>(w)))];
        }
      }
      out[static_cast<std::size_t>(y * static_cast<long>(w) + x)] = static_cast<float>(acc);
    }
  }
  std::copy(out.begin(), out.end(), plane.begin());
}

std::vector<double> disk_kernel(double radius, std::size_t& side) {
  const long r = static_cast<long>(std::ceil(radius));
  side = static_cast<std::size_t>(2 * r + 1);
  std::vector<double> k(side * side, 0.0);
  double sum = 0.0;
  for (long y = -r; y <= r; ++y) {
    for (long x = -r; x <= r; ++x) {
      if (static_cast<double>(x * x + y * y) <= radius * radius) {
        k[static_cast<std::size_t>((y + r) * static_cast<long>(side) + x + r)] = 1.0;
        sum += 1.0;
      }
    }
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Line of `length` pixels through the centre at `angle`, bilinearly splatted.
std::vector<double> motion_kernel(double length, double angle, std::size_t& side) {
  const long r = static_cast<long>(std::ceil((length - 1.0) / 2.0)) + 1;
  side = static_cast<std::size_t>(2 * r + 1);
  std::vector<double> k(side * side, 0.0);
  const double half = (length - 1.0) / 2.0;
  const int samples = static_cast<int>(length * 8.0);
  for (int i = 0; i <= samples; ++i) {
    const double t = -half + (2.0 * half) * i / samples;
    const double px = t * std::cos(angle) + static_cast<double>(r);
    const double py = t * std::sin(angle) + static_cast<double>(r);
    const auto x0 = static_cast<long>(std::floor(px)), y0 = static_cast<long>(std::floor(py));
    const double fx = px - static_cast<double>(x0), fy = py - static_cast<double>(y0);
    const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    const long xs[4] = {x0, x0 + 1, x0, x0 + 1}, ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int j = 0; j < 4; ++j) {
      if (xs[j] >= 0 && ys[j] >= 0 && xs[j] < static_cast<long>(side) && ys[j] < static_cast<long>(side)) {
        k[static_cast<std::size_t>(ys[j] * static_cast<long>(side) + xs[j])] += w[j];
      }
    }
  }
  double sum = 0.0;
  for (double v : k) sum += v;
  for (auto& v : k) v /= sum;
  return k;
}

void pixelate(Tensor& img, std::size_t s, double factor) {
  const std::size_t h = img.h(), w = img.w();
  const auto sh = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(static_cast<double>(h) * factor - 1e-9)));
  const auto sw = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(static_cast<double>(w) * factor - 1e-9)));
  // Source row/column -> cell index; each cell averages exactly the pixels mapped to it.
  std::vector<std::size_t> row_cell(h), col_cell(w);
  for (std::size_t y = 0; y < h; ++y) row_cell[y] = y * sh / h;
  for (std::size_t x = 0; x < w; ++x) col_cell[x] = x * sw / w;
  std::vector<double> sum(sh * sw);
  std::vector<std::size_t> count(sh * sw);
  for (std::size_t c = 0; c < img.c(); ++c) {
    auto plane = img.plane(s, c);
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(count.begin(), count.end(), 0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        sum[row_cell[y] * sw + col_cell[x]] += plane[y * w + x];
        ++count[row_cell[y] * sw + col_cell[x]];
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t cell = row_cell[y] * sw + col_cell[x];
        plane[y * w + x] = static_cast<float>(sum[cell] / static_cast<double>(count[cell]));
      }
  }
}

void corrupt_sample(Tensor& img, std::size_t s, const CorruptionSpec& spec, Rng& rng) {
  const double p = spec.param();
  const std::size_t h = img.h(), w = img.w();
  switch (spec.kind) {
    case Kind::gaussian_noise: {
      std::normal_distribution<double> noise(0.0, p);
      for (auto& v : img.sample(s)) v = static_cast<float>(v + noise(rng));
      break;
    }
    case Kind::shot_noise: {
      for (auto& v : img.sample(s)) {
        const double mean = std::max(0.0, static_cast<double>(v)) * p;
        if (mean <= 0.0) {
          v = 0.0f;
          continue;
        }
        std::poisson_distribution<long> photons(mean);
        v = static_cast<float>(static_cast<double>(photons(rng)) / p);
      }
      break;
    }
    case Kind::defocus_blur: {
      const double radius = std::max(1.0, std::round(p * static_cast<double>(std::min(h, w)) / 32.0));
      std::size_t side = 0;
      const auto k = disk_kernel(radius, side);
      for (std::size_t c = 0; c < img.c(); ++c) convolve(img.plane(s, c), h, w, k, side);
      break;
    }
    case Kind::motion_blur: {
      const double angle = uniform01(rng) * std::numbers::pi;
      std::size_t side = 0;
      const auto k = motion_kernel(p, angle, side);
      for (std::size_t c = 0; c < img.c(); ++c) convolve(img.plane(s, c), h, w, k, side);
      break;
    }
    case Kind::fog:
      for (auto& v : img.sample(s)) v = static_cast<float>((1.0 - p) * v + p);
      break;
    case Kind::brightness:
      for (auto& v : img.sample(s)) v = static_cast<float>(v + p);
      break;
    case Kind::contrast: {
      double mean = 0.0;
      for (float v : img.sample(s)) mean += v;
      mean /= static_cast<double>(img.sample(s).size());
      for (auto& v : img.sample(s)) v = static_cast<float>(mean + p * (v - mean));
      break;
    }
    case Kind::pixelate:
      pixelate(img, s, p);
      break;
  }
  for (auto& v : img.sample(s)) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::gaussian_noise: return "gaussian_noise";
    case Kind::shot_noise: return "shot_noise";
    case Kind::defocus_blur: return "defocus_blur";
    case Kind::motion_blur: return "motion_blur";
    case Kind::fog: return "fog";
    case Kind::brightness: return "brightness";
    case Kind::contrast: return "contrast";
    case Kind::pixelate: return "pixelate";
  }
  return "?";
}

std::string to_string(Group group) {
  switch (group) {
    case Group::noise: return "noise";
    case Group::blur: return "blur";
    case Group::weather: return "weather";
    case Group::digital: return "digital";
  }
  return "?";
}

Kind parse_kind(const std::string& s) {
  for (Kind k : kAllKinds) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown corruption kind '" + s + "'");
}

Group group_of(Kind kind) {
  switch (kind) {
    case Kind::gaussian_noise:
    case Kind::shot_noise: return Group::noise;
    case Kind::defocus_blur:
    case Kind::motion_blur: return Group::blur;
    case Kind::fog:
    case Kind::brightness: return Group::weather;
    case Kind::contrast:
    case Kind::pixelate: return Group::digital;
  }
  return Group::noise;
}

double parameter(Kind kind, int severity) {
  if (severity < 1 || severity > kMaxSeverity) {
    throw ConfigError("corruption severity " + std::to_string(severity) + " outside 1..5");
  }
  return kTable[static_cast<std::size_t>(kind)][static_cast<std::size_t>(severity - 1)];
}

CorruptionSpec make_spec(Kind kind, int severity) {
  if (severity < 0 || severity > kMaxSeverity) {
    throw ConfigError("corruption severity " + std::to_string(severity) + " outside 0..5");
  }
  return {kind, severity};
}

std::vector<CorruptionSpec> corruption_suite() {
  std::vector<CorruptionSpec> suite;
  for (Kind k : kAllKinds)
    for (int s = 1; s <= kMaxSeverity; ++s) suite.push_back({k, s});
  return suite;
}

Tensor corrupt01(const Tensor& images01, const CorruptionSpec& spec, Rng& rng) {
  if (spec.severity < 0 || spec.severity > kMaxSeverity) {
    throw ConfigError("corruption severity " + std::to_string(spec.severity) + " outside 0..5");
  }
  Tensor out = images01;
  if (spec.severity == 0) return out;
  for (std::size_t s = 0; s < out.n(); ++s) corrupt_sample(out, s, spec, rng);
  return out;
}

data::ImageBatch corrupt(const data::ImageBatch& batch, const CorruptionSpec& spec, Rng& rng) {
  if (spec.severity == 0) return batch;
  data::ImageBatch out = batch;
  out.pixels = corrupt01(batch.normalization.denormalize(batch.pixels), spec, rng);
  batch.normalization.normalize_inplace(out.pixels);
  return out;
}

data::ImageBatch corrupt_indexed(const data::ImageBatch& batch, const CorruptionSpec& spec, std::uint64_t seed) {
  if (spec.severity == 0) return batch;
  data::ImageBatch out = batch;
  Tensor images = batch.normalization.denormalize(batch.pixels);
  for (std::size_t s = 0; s < images.n(); ++s) {
    const std::uint64_t index = s < batch.indices.size() ? batch.indices[s] : s;
    Rng rng = make_rng(seed, Stream::corruption, spec.id(), index);
    corrupt_sample(images, s, spec, rng);
  }
  batch.normalization.normalize_inplace(images);
  out.pixels = std::move(images);
  return out;
}

}  // namespace styleaug::corruptions
