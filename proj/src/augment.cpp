#include "styleaug/augment.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "styleaug/data/image_io.hpp"

namespace styleaug::augment {

namespace fs = std::filesystem;

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::none: return "none";
    case Mode::styleaugment: return "styleaugment";
    case Mode::label_mix: return "label_mix";
    case Mode::mixup: return "mixup";
    case Mode::cutmix: return "cutmix";
    case Mode::prestylized: return "prestylized";
  }
  return "none";
}

Mode parse_mode(const std::string& s) {
  for (Mode m : {Mode::none, Mode::styleaugment, Mode::label_mix, Mode::mixup, Mode::cutmix, Mode::prestylized}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown augment mode '" + s + "'");
}

bool doubles_batch(Mode mode) { return mode == Mode::styleaugment || mode == Mode::label_mix; }
bool needs_stylizer(Mode mode) { return doubles_batch(mode); }

std::vector<MixTarget> AugmentedBatch::targets() const {
  std::vector<MixTarget> t;
  t.reserve(labels.size());
  for (int l : labels) t.push_back(MixTarget::hard(l));
  return t;
}

std::vector<std::size_t> draw_style_permutation(std::size_t n, Rng& rng) { return random_permutation(n, rng); }

AugmentedBatch style_augment_with(const data::ImageBatch& batch, const stylizer::StylizerWeights& weights,
                                  std::span<const std::size_t> permutation, float alpha) {
  const std::size_t n = batch.size();
  if (n == 0) throw ShapeError("style_augment: empty batch");
  const Tensor content01 = batch.normalization.denormalize(batch.pixels);
  // Stylized samples are plain inputs from here on; nothing links them back
  // to the stylizer.
  Tensor stylized = stylizer::stylize_permuted01(content01, permutation, weights, alpha);
  batch.normalization.normalize_inplace(stylized);

  AugmentedBatch out;
  out.pixels = concat_batch(batch.pixels, stylized);
  out.labels = batch.labels;
  out.labels.insert(out.labels.end(), batch.labels.begin(), batch.labels.end());
  out.style_assignment.assign(permutation.begin(), permutation.end());
  out.mode = Mode::styleaugment;
  out.normalization = batch.normalization;
  return out;
}

AugmentedBatch style_augment(const data::ImageBatch& batch, const stylizer::StylizerWeights& weights, Rng& rng,
                             float alpha) {
  const auto perm = draw_style_permutation(batch.size(), rng);
  return style_augment_with(batch, weights, perm, alpha);
}

std::pair<AugmentedBatch, std::vector<MixTarget>> style_augment_label_mix(const data::ImageBatch& batch,
                                                                        const stylizer::StylizerWeights& weights,
                                                                        Rng& rng, float lam, float alpha) {
  if (!(lam >= 0.0f && lam <= 1.0f)) throw ConfigError("label mixing lambda must lie in [0, 1]");
  AugmentedBatch out = style_augment(batch, weights, rng, alpha);
  out.mode = Mode::label_mix;
  const std::size_t n = batch.size();
  std::vector<MixTarget> targets;
  targets.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) targets.push_back(MixTarget::hard(batch.labels[i]));
  for (std::size_t i = 0; i < n; ++i) {
    const int content_label = batch.labels[i];
    const int style_label = batch.labels[out.style_assignment[i]];
    targets.push_back(lam == 1.0f ? MixTarget::hard(content_label) : MixTarget{content_label, style_label, lam});
  }
  return {std::move(out), std::move(targets)};
}

double sample_beta(Rng& rng, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(rng), y = gb(rng);
  if (x + y <= 0.0) return 0.5;
  return x / (x + y);
}

MixedBatch mixup_with(const data::ImageBatch& batch, std::span<const std::size_t> perm, float lam) {
  if (perm.size() != batch.size()) throw ShapeError("mixup: permutation length differs from batch size");
  MixedBatch out{batch, {}};
  const float other = 1.0f - lam;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto dst = out.batch.pixels.sample(i);
    auto a = batch.pixels.sample(i);
    auto b = batch.pixels.sample(perm[i]);
    if (lam != 1.0f) {
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = lam * a[k] + other * b[k];
    }
    out.targets.push_back({batch.labels[i], batch.labels[perm[i]], lam});
  }
  return out;
}

MixedBatch mixup_batch(const data::ImageBatch& batch, Rng& rng, double beta_param) {
  const auto lam = static_cast<float>(sample_beta(rng, beta_param, beta_param));
  const auto perm = random_permutation(batch.size(), rng);
  return mixup_with(batch, perm, lam);
}

MixedBatch cutmix_with(const data::ImageBatch& batch, std::span<const std::size_t> perm, const Box& box) {
  if (perm.size() != batch.size()) throw ShapeError("cutmix: permutation length differs from batch size");
  const std::size_t h = batch.pixels.h(), w = batch.pixels.w();
  if (box.y1 > h || box.x1 > w || box.y0 > box.y1 || box.x0 > box.x1) throw ShapeError("cutmix: box outside image");
  MixedBatch out{batch, {}};
  const float lam = 1.0f - static_cast<float>(box.area()) / static_cast<float>(h * w);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t c = 0; c < batch.pixels.c(); ++c) {
      auto dst = out.batch.pixels.plane(i, c);
      auto src = batch.pixels.plane(perm[i], c);
      for (std::size_t y = box.y0; y < box.y1; ++y)
        for (std::size_t x = box.x0; x < box.x1; ++x) dst[y * w + x] = src[y * w + x];
    }
    out.targets.push_back({batch.labels[i], batch.labels[perm[i]], lam});
  }
  return out;
}

MixedBatch cutmix_batch(const data::ImageBatch& batch, Rng& rng, double beta_param) {
  const double lam = sample_beta(rng, beta_param, beta_param);
  const std::size_t h = batch.pixels.h(), w = batch.pixels.w();
  const double ratio = std::sqrt(1.0 - lam);
  const auto cut_h = static_cast<long>(static_cast<double>(h) * ratio);
  const auto cut_w = static_cast<long>(static_cast<double>(w) * ratio);
  const auto cy = static_cast<long>(uniform_below(rng, h));
  const auto cx = static_cast<long>(uniform_below(rng, w));
  Box box;
  box.y0 = static_cast<std::size_t>(std::clamp<long>(cy - cut_h / 2, 0, static_cast<long>(h)));
  box.y1 = static_cast<std::size_t>(std::clamp<long>(cy + cut_h / 2, 0, static_cast<long>(h)));
  box.x0 = static_cast<std::size_t>(std::clamp<long>(cx - cut_w / 2, 0, static_cast<long>(w)));
  box.x1 = static_cast<std::size_t>(std::clamp<long>(cx + cut_w / 2, 0, static_cast<long>(w)));
  const auto perm = random_permutation(batch.size(), rng);
  return cutmix_with(batch, perm, box);
}

PrestylizeResult prestylize_dataset(const data::DatasetHandle& dataset, const fs::path& style_folder,
                                    const stylizer::StylizerWeights& weights, const fs::path& out_dir,
                                    std::uint64_t seed, float alpha) {
  const auto files = data::list_images(style_folder);
  if (files.empty()) throw ConfigError("style folder has no images: " + style_folder.string());
  const std::size_t res = dataset.height();
  if (dataset.width() != res) throw ShapeError("prestylize: square images required");
  weights.check_resolution(res, res);

  std::vector<Tensor> styles;
  PrestylizeResult result{dataset, {}, {}};
  for (const auto& f : files) {
    auto img = data::read_image_rgb(f, res);
    if (!img) throw IngestionError("cannot decode style image " + f.string());
    Tensor t({1, 3, res, res});
    for (std::size_t i = 0; i < img->size(); ++i) t[i] = static_cast<float>((*img)[i]) / 255.0f;
    styles.push_back(std::move(t));
    result.style_files.push_back(f.filename().string());
  }

  Rng rng = make_rng(seed, Stream::prestylize);
  const std::size_t n = dataset.size();
  result.style_ids.resize(n);
  for (auto& id : result.style_ids) id = static_cast<std::size_t>(uniform_below(rng, styles.size()));

  std::vector<std::uint8_t> pixels(n * 3 * res * res);
  std::vector<int> labels(n);
  nlohmann::json assignments = nlohmann::json::array();
  constexpr std::size_t kChunk = 32;
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t end = std::min(n, begin + kChunk);
    std::vector<std::size_t> pos(end - begin);
    std::iota(pos.begin(), pos.end(), begin);
    const Tensor content = dataset.images01(pos);
    Tensor style({pos.size(), 3, res, res});
    for (std::size_t i = 0; i < pos.size(); ++i) {
      auto src = styles[result.style_ids[pos[i]]].sample(0);
      std::copy(src.begin(), src.end(), style.sample(i).begin());
    }
    const Tensor out = stylizer::stylize01(content, style, weights, alpha);
    for (std::size_t i = 0; i < pos.size(); ++i) {
      const std::size_t p = pos[i];
      const auto bytes = data::to_bytes(out, i);
      std::copy(bytes.begin(), bytes.end(), pixels.begin() + static_cast<long>(p * bytes.size()));
      labels[p] = dataset.label(p);
      std::ostringstream name;
      name << std::setw(6) << std::setfill('0') << p << ".png";
      const fs::path rel = fs::path("train") / dataset.class_names().at(static_cast<std::size_t>(labels[p])) / name.str();
      data::write_png(out_dir / rel, bytes, res, res);
      assignments.push_back({{"content", dataset.storage_index(p)},
                             {"style", result.style_ids[p]},
                             {"file", rel.generic_string()}});
    }
  }

  nlohmann::json manifest = {{"seed", seed},
                             {"alpha", alpha},
                             {"style_folder", style_folder.string()},
                             {"styles", result.style_files},
                             {"encoder", stylizer::to_string(weights.arch())},
                             {"assignments", assignments}};
  std::ofstream(out_dir / "manifest.json") << manifest.dump(2) << '\n';

  result.dataset = data::from_images(std::move(pixels), std::move(labels), dataset.class_names(), res, res,
                                     data::Split::train, dataset.normalization(), dataset.seed());
  return result;
}

}  // namespace styleaug::augment
