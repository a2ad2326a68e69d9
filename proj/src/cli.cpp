#include "styleaug/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

#include "styleaug/augment.hpp"
#include "styleaug/corruptions.hpp"
#include "styleaug/data/image_io.hpp"
#include "styleaug/data/synthetic.hpp"
#include "styleaug/evaluation.hpp"
#include "styleaug/log.hpp"
#include "styleaug/stylizer.hpp"
#include "styleaug/trainer.hpp"

#ifndef STYLEAUG_VERSION
#define STYLEAUG_VERSION "unknown"
#endif

namespace styleaug::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string code_version() { return STYLEAUG_VERSION; }

json RunManifest::to_json() const {
  return {{"command", command},     {"argv", argv},         {"config_path", config_path},
          {"config_hash", config_hash}, {"config", config},  {"seeds", seeds},
          {"code_version", code_version}, {"outputs", outputs}, {"started", started},
          {"finished", finished},   {"status", status},     {"error", error}};
}

fs::path write_manifest(const RunManifest& manifest, const fs::path& manifest_dir) {
  fs::create_directories(manifest_dir);
  std::string stamp = manifest.started;
  stamp.erase(std::remove_if(stamp.begin(), stamp.end(), [](char c) { return c == '-' || c == ':'; }), stamp.end());
  for (int n = 0;; ++n) {
    std::ostringstream name;
    name << manifest.command << '_' << stamp << '_' << std::setw(3) << std::setfill('0') << n << ".json";
    const fs::path path = manifest_dir / name.str();
    // Append-only: an existing manifest is never replaced.
    if (fs::exists(path)) continue;
    std::ofstream os(path);
    if (!os) throw Error("cannot write manifest " + path.string());
    os << manifest.to_json().dump(2) << '\n';
    if (!os) throw Error("failed writing manifest " + path.string());
    return path;
  }
}

namespace {

constexpr std::uint64_t kSyntheticDataSeed = 1234;

// ----------------------------------------------------------------- datasets

struct DataOptions {
  std::string kind = "cifar10";
  std::string root;
  std::size_t resolution = 32;
  std::size_t synthetic_size = 512;
  std::size_t synthetic_classes = 10;
  std::size_t subset = 0;
  CLI::Option* kind_opt = nullptr;
  CLI::Option* root_opt = nullptr;
  CLI::Option* resolution_opt = nullptr;
  CLI::Option* synthetic_size_opt = nullptr;
  CLI::Option* synthetic_classes_opt = nullptr;
  CLI::Option* subset_opt = nullptr;
};

void add_data_options(CLI::App* app, DataOptions& d, const std::string& subset_help) {
  d.kind_opt = app->add_option("--dataset", d.kind, "cifar10 | folder | synthetic")
                   ->check(CLI::IsMember({"cifar10", "folder", "synthetic"}));
  d.root_opt = app->add_option("--data-root", d.root, std::string("dataset root (default: $") + kDataRootEnv + ")");
  d.resolution_opt = app->add_option("--resolution", d.resolution, "image side in pixels");
  d.synthetic_size_opt = app->add_option("--synthetic-size", d.synthetic_size, "train images of the synthetic set");
  d.synthetic_classes_opt = app->add_option("--synthetic-classes", d.synthetic_classes, "synthetic class count");
  d.subset_opt = app->add_option("--subset", d.subset, subset_help);
}

std::string resolve_root(const std::string& given) {
  if (!given.empty()) return given;
  if (const char* env = std::getenv(kDataRootEnv)) return env;
  return {};
}

data::DatasetHandle load_split(const std::string& kind, const std::string& root_arg, data::Split split,
                               std::size_t resolution, std::size_t synthetic_size, std::size_t synthetic_classes) {
  if (kind == "synthetic") {
    // Test split holds a quarter as many images as the train split.
    const std::size_t n = split == data::Split::train ? synthetic_size
                                                      : std::max(synthetic_size / 4, 2 * synthetic_classes);
    return data::make_synthetic(n, resolution, synthetic_classes, split, kSyntheticDataSeed);
  }
  const std::string root = resolve_root(root_arg);
  if (root.empty()) {
    throw ConfigError(std::string("no dataset root: pass --data-root or set ") + kDataRootEnv);
  }
  if (!fs::exists(root)) throw ConfigError("dataset root does not exist: " + root);
  if (kind == "cifar10") {
    if (resolution != 32) throw ConfigError("cifar10 images are 32x32; got --resolution " + std::to_string(resolution));
    return data::load_cifar10(root, split);
  }
  if (kind == "folder") return data::load_image_folder(root, split, resolution);
  throw ConfigError("unknown dataset kind '" + kind + "'");
}

data::DatasetHandle load_split(const DataOptions& d, data::Split split) {
  auto ds = load_split(d.kind, d.root, split, d.resolution, d.synthetic_size, d.synthetic_classes);
  if (d.subset > 0 && d.subset < ds.size()) ds = ds.subset(d.subset, kSyntheticDataSeed);
  return ds;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " is required");
  if (!fs::is_regular_file(path)) throw ConfigError(what + " not found: " + path);
}

void require_dir(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " is required");
  if (!fs::is_directory(path)) throw ConfigError(what + " not found: " + path);
}

stylizer::StylizerWeights load_stylizer(const std::string& path) {
  require_file(path, "stylizer weights");
  return stylizer::load_weights(path);
}

// ------------------------------------------------------------ run context

struct Context {
  fs::path out_dir;
  bool force = false;
  RunManifest manifest;
  bool begun = false;

  fs::path dir(const char* sub) const { return out_dir / sub; }

  // Creates the output layout and starts the clock. Nothing is written to
  // disk before this call.
  void begin() {
    if (out_dir.empty()) throw ConfigError("--out-dir is required");
    for (const char* sub : {"checkpoints", "reports", "previews", "manifests"}) fs::create_directories(out_dir / sub);
    manifest.started = evaluation::utc_timestamp();
    manifest.code_version = code_version();
    begun = true;
  }

  // Throws unless `path` is absent or --force was given.
  void claim(const fs::path& path) const {
    if (fs::exists(path) && !force) {
      throw ConfigError(path.string() + " already exists; pass --force to overwrite");
    }
  }

  void output(const fs::path& path) { manifest.outputs.push_back(path.string()); }

  fs::path finish(const std::string& status, const std::string& error = {}) {
    manifest.finished = evaluation::utc_timestamp();
    manifest.status = status;
    manifest.error = error;
    return write_manifest(manifest, dir("manifests"));
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
  if (!os) throw Error("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

// -------------------------------------------------------------------- train

struct TrainArgs {
  std::string config_path;
  std::string resume;
  std::string prestylized_dir;
  std::size_t checkpoint_every = 1;
  std::size_t stop_after_epoch = 0;
  DataOptions data;
  trainer::TrainConfig cfg;  // flag targets
  std::string arch, optimizer, augment_mode;
  std::vector<std::pair<CLI::Option*, std::function<void(trainer::TrainConfig&)>>> overrides;
};

void add_train_options(CLI::App* app, TrainArgs& a) {
  app->add_option("--config", a.config_path, "TrainConfig JSON file");
  app->add_option("--resume", a.resume, "continue from this checkpoint");
  app->add_option("--prestylized-dir", a.prestylized_dir, "output of the prestylize command (prestylized mode)");
  app->add_option("--checkpoint-every", a.checkpoint_every, "epochs between checkpoints");
  app->add_option("--stop-after-epoch", a.stop_after_epoch, "stop early after this epoch; the schedule is unchanged");
  add_data_options(app, a.data, "train on a seeded subset of this many images");

  auto& o = a.overrides;
  auto& c = a.cfg;
  o.emplace_back(app->add_option("--epochs", c.epochs), [&a](auto& t) { t.epochs = a.cfg.epochs; });
  o.emplace_back(app->add_option("--batch-size", c.batch_size, "inputs per optimizer step"),
                 [&a](auto& t) { t.batch_size = a.cfg.batch_size; });
  o.emplace_back(app->add_option("--lr", c.base_lr, "base learning rate"),
                 [&a](auto& t) { t.base_lr = a.cfg.base_lr; });
  o.emplace_back(app->add_option("--arch", a.arch, "resnet18 | small_resnet_cifar"),
                 [&a](auto& t) { t.arch = trainer::parse_arch(a.arch); });
  o.emplace_back(app->add_option("--optimizer", a.optimizer, "sgd_momentum | adam"),
                 [&a](auto& t) { t.optimizer = trainer::parse_optimizer(a.optimizer); });
  o.emplace_back(app->add_option("--augment", a.augment_mode,
                                 "none | styleaugment | label_mix | mixup | cutmix | prestylized"),
                 [&a](auto& t) { t.augment_mode = augment::parse_mode(a.augment_mode); });
  o.emplace_back(app->add_option("--alpha", c.alpha, "stylization strength"), [&a](auto& t) { t.alpha = a.cfg.alpha; });
  o.emplace_back(app->add_option("--seed", c.seed), [&a](auto& t) { t.seed = a.cfg.seed; });
  o.emplace_back(app->add_option("--label-mix-lambda", c.label_mix_lambda),
                 [&a](auto& t) { t.label_mix_lambda = a.cfg.label_mix_lambda; });
  o.emplace_back(app->add_option("--mix-beta", c.mix_beta, "Beta parameter for mixup/cutmix"),
                 [&a](auto& t) { t.mix_beta = a.cfg.mix_beta; });
  o.emplace_back(app->add_option("--stylizer-weights", c.stylizer_weights),
                 [&a](auto& t) { t.stylizer_weights = a.cfg.stylizer_weights; });
}

// CLI flag > config file > default.
trainer::TrainConfig resolve_train_config(const TrainArgs& a, const std::optional<trainer::TrainConfig>& base) {
  trainer::TrainConfig cfg = base ? *base : trainer::TrainConfig{};
  if (!a.config_path.empty()) cfg = trainer::TrainConfig::from_json(read_json(a.config_path));
  for (const auto& [opt, apply] : a.overrides) {
    if (opt->count() > 0) apply(cfg);
  }
  const auto& d = a.data;
  if (d.kind_opt->count()) cfg.dataset = d.kind;
  if (d.root_opt->count()) cfg.data_root = d.root;
  if (d.resolution_opt->count()) cfg.resolution = d.resolution;
  if (d.synthetic_size_opt->count()) cfg.synthetic_size = d.synthetic_size;
  if (d.synthetic_classes_opt->count()) cfg.synthetic_classes = d.synthetic_classes;
  if (d.subset_opt->count()) cfg.train_subset = d.subset;
  cfg.validate();
  return cfg;
}

data::DatasetHandle load_train_set(const trainer::TrainConfig& cfg) {
  auto ds = load_split(cfg.dataset, cfg.data_root, data::Split::train, cfg.resolution, cfg.synthetic_size,
                       cfg.synthetic_classes);
  if (cfg.train_subset > 0 && cfg.train_subset < ds.size()) ds = ds.subset(cfg.train_subset, kSyntheticDataSeed);
  return ds;
}

std::string checkpoint_name(std::size_t epoch) {
  std::ostringstream name;
  name << "epoch_" << std::setw(3) << std::setfill('0') << epoch << ".ckpt";
  return name.str();
}

void cmd_train(Context& ctx, const TrainArgs& a) {
  std::optional<trainer::Checkpoint> ck;
  if (!a.resume.empty()) {
    require_file(a.resume, "checkpoint");
    ck = trainer::load_checkpoint(a.resume);
  }
  const auto cfg = resolve_train_config(a, ck ? std::optional(ck->config) : std::nullopt);
  if (ck && ck->config_hash != cfg.hash()) {
    throw ConfigError("refusing to resume: config hash " + cfg.hash() + " differs from checkpoint's " + ck->config_hash);
  }
  std::optional<stylizer::StylizerWeights> weights;
  if (augment::needs_stylizer(cfg.augment_mode)) {
    if (cfg.stylizer_weights.empty()) {
      throw ConfigError("augment mode " + augment::to_string(cfg.augment_mode) + " needs --stylizer-weights");
    }
    weights = load_stylizer(cfg.stylizer_weights);
  }
  const auto train_set = load_train_set(cfg);
  std::optional<data::DatasetHandle> prestylized;
  if (cfg.augment_mode == augment::Mode::prestylized) {
    require_dir(a.prestylized_dir, "--prestylized-dir");
    auto p = data::load_image_folder(a.prestylized_dir, data::Split::train, cfg.resolution);
    if (p.class_names() != train_set.class_names()) {
      throw ConfigError("prestylized classes differ from the training set's");
    }
    // Stylized images are fed through the clean set's normalization.
    prestylized = p.with_normalization(train_set.normalization());
  }

  // Every file this run would write must be free unless --force.
  const std::size_t first = ck ? ck->epochs_completed + 1 : 1;
  for (std::size_t e = first; e <= cfg.epochs; ++e) ctx.claim(ctx.dir("checkpoints") / checkpoint_name(e));
  const fs::path metrics = ctx.dir("reports") / "metrics.jsonl";
  if (!ck) ctx.claim(metrics);

  ctx.manifest.config_path = a.config_path;
  ctx.manifest.config = cfg.to_json();
  ctx.manifest.config_hash = cfg.hash();
  ctx.manifest.seeds = {{"train", cfg.seed}, {"synthetic_data", kSyntheticDataSeed}};
  ctx.begin();
  write_text(ctx.dir("reports") / "config.json", cfg.to_json().dump(2) + "\n");

  std::ofstream log(metrics, std::ios::trunc);
  if (!log) throw Error("cannot write " + metrics.string());
  if (ck) {
    for (const auto& r : ck->log) log << r.to_json().dump() << '\n';
  }
  trainer::TrainOptions opt;
  opt.checkpoint_dir = ctx.dir("checkpoints");
  opt.checkpoint_every = a.checkpoint_every;
  opt.stop_after_epoch = a.stop_after_epoch;
  opt.on_record = [&log](const trainer::MetricRecord& r) { log << r.to_json().dump() << '\n' << std::flush; };
  if (prestylized) opt.prestylized = &*prestylized;

  const stylizer::StylizerWeights* w = weights ? &*weights : nullptr;
  const auto result = ck ? trainer::resume(*ck, cfg, train_set, w, opt) : trainer::train(cfg, train_set, w, opt);
  for (std::size_t e = first; e <= result.epochs_completed; ++e) {
    const auto p = ctx.dir("checkpoints") / checkpoint_name(e);
    if (fs::exists(p)) ctx.output(p);
  }
  ctx.output(metrics);
  ctx.output(ctx.dir("reports") / "config.json");
  std::cout << (ctx.dir("checkpoints") / checkpoint_name(result.epochs_completed)).string() << '\n';
}

// --------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string config_path;
  std::string stylizer_weights;
  std::string name;
  bool suite = false, occlusion = false, unbiased = false;
  std::size_t unbiased_k = 10;
  std::uint64_t seed = 0;
  DataOptions data;
};

void cmd_eval(Context& ctx, const EvalArgs& a) {
  require_file(a.checkpoint, "checkpoint");
  const auto ck = trainer::load_checkpoint(a.checkpoint);
  if (!a.config_path.empty()) {
    const auto cfg = trainer::TrainConfig::from_json(read_json(a.config_path));
    if (cfg.hash() != ck.config_hash) {
      throw ConfigError("config " + a.config_path + " (hash " + cfg.hash() + ") does not match checkpoint (hash " +
                        ck.config_hash + ")");
    }
  }
  const auto& tc = ck.config;
  DataOptions d = a.data;
  if (!d.kind_opt->count()) d.kind = tc.dataset;
  if (!d.root_opt->count()) d.root = tc.data_root;
  if (!d.resolution_opt->count()) d.resolution = tc.resolution;
  if (!d.synthetic_size_opt->count()) d.synthetic_size = tc.synthetic_size;
  if (!d.synthetic_classes_opt->count()) d.synthetic_classes = tc.synthetic_classes;

  std::optional<stylizer::StylizerWeights> weights;
  if (a.unbiased) {
    const std::string path = a.stylizer_weights.empty() ? tc.stylizer_weights : a.stylizer_weights;
    if (path.empty()) throw ConfigError("--unbiased needs --stylizer-weights for texture features");
    weights = load_stylizer(path);
  }
  const auto test = load_split(d, data::Split::test);
  if (test.num_classes() != ck.num_classes) {
    throw ConfigError("test set has " + std::to_string(test.num_classes()) + " classes; checkpoint has " +
                      std::to_string(ck.num_classes));
  }
  if (test.height() != tc.resolution) throw ConfigError("test resolution differs from the checkpoint's");

  const std::string name = a.name.empty() ? "eval_" + fs::path(a.checkpoint).stem().string() : a.name;
  const fs::path report_path = ctx.dir("reports") / (name + ".json");
  const fs::path csv_path = ctx.dir("reports") / (name + "_corruptions.csv");
  ctx.claim(report_path);
  if (a.suite) ctx.claim(csv_path);

  ctx.manifest.config = tc.to_json();
  ctx.manifest.config_hash = ck.config_hash;
  ctx.manifest.config_path = a.config_path;
  ctx.manifest.seeds = {{"corruption", a.seed}, {"kmeans", a.seed}};
  ctx.begin();

  const auto model = trainer::classifier_from_checkpoint(ck);
  const evaluation::Predictor predict = [&model](const Tensor& x) { return model.predict(x); };
  evaluation::EvalReport report;
  report.clean_acc = evaluation::eval_clean(predict, test);
  log_info("clean accuracy " + std::to_string(*report.clean_acc));
  if (a.suite) {
    report.corruption = evaluation::eval_corruptions(predict, test, corruptions::corruption_suite(), a.seed);
    log_info("corruption accuracy " + std::to_string(report.corruption->overall));
  }
  if (a.occlusion) {
    report.occlusion_acc = evaluation::eval_occlusion(predict, test);
    log_info("occlusion accuracy " + std::to_string(*report.occlusion_acc));
  }
  if (a.unbiased) {
    const auto u = evaluation::unbiased_accuracy(predict, test, *weights, a.unbiased_k, a.seed);
    report.unbiased_acc = u.accuracy;
    report.unbiased_clusters = a.unbiased_k;
    report.unbiased_defined_cells = u.defined_cells;
    report.unbiased_degenerate = u.degenerate_clustering;
    if (u.degenerate_clustering) log_warning("texture clustering left empty clusters");
    log_info("unbiased accuracy " + std::to_string(u.accuracy));
  }
  report.config_hash = ck.config_hash;
  report.seeds = ctx.manifest.seeds;
  report.timestamp = evaluation::utc_timestamp();
  report.checkpoint = a.checkpoint;
  report.dataset = evaluation::dataset_manifest(test);
  evaluation::write_report(report, report_path);
  ctx.output(report_path);
  if (report.corruption) {
    write_text(csv_path, evaluation::corruption_csv(*report.corruption));
    ctx.output(csv_path);
  }
  std::cout << report_path.string() << '\n';
}

// ---------------------------------------------------------- stylize-preview

struct PreviewArgs {
  std::string content_dir, style_dir, weights;
  bool in_batch = false;
  float alpha = 1.0f;
  std::uint64_t seed = 0;
  std::size_t resolution = 32;
  std::size_t max_images = 0;
};

Tensor read_images01(const std::vector<fs::path>& files, std::size_t res) {
  Tensor t({files.size(), 3, res, res});
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto img = data::read_image_rgb(files[i], res);
    if (!img) throw IngestionError("cannot decode image " + files[i].string());
    auto dst = t.sample(i);
    for (std::size_t k = 0; k < img->size(); ++k) dst[k] = static_cast<float>((*img)[k]) / 255.0f;
  }
  return t;
}

void cmd_stylize_preview(Context& ctx, const PreviewArgs& a) {
  require_dir(a.content_dir, "--content-dir");
  if (a.in_batch == !a.style_dir.empty()) throw ConfigError("pass exactly one of --style-dir and --in-batch");
  if (!(a.alpha >= 0.0f && a.alpha <= 1.0f)) throw ConfigError("--alpha must lie in [0, 1]");
  auto contents = data::list_images(a.content_dir);
  if (a.max_images > 0 && contents.size() > a.max_images) contents.resize(a.max_images);
  if (contents.empty()) throw ConfigError("no images in " + a.content_dir);
  std::vector<fs::path> styles;
  if (!a.in_batch) {
    require_dir(a.style_dir, "--style-dir");
    styles = data::list_images(a.style_dir);
    if (styles.empty()) throw ConfigError("no images in " + a.style_dir);
  }
  const auto weights = load_stylizer(a.weights);
  weights.check_resolution(a.resolution, a.resolution);

  const fs::path grid_path = ctx.dir("previews") / "preview.png";
  const fs::path index_path = ctx.dir("previews") / "preview.json";
  ctx.claim(grid_path);
  ctx.claim(index_path);
  ctx.manifest.seeds = {{"style", a.seed}};
  ctx.manifest.config = {{"alpha", a.alpha}, {"resolution", a.resolution}, {"in_batch", a.in_batch}};
  ctx.begin();

  const std::size_t n = contents.size(), res = a.resolution;
  const Tensor content = read_images01(contents, res);
  Rng rng = make_rng(a.seed, Stream::style);
  std::vector<std::string> style_names(n);
  Tensor style({n, 3, res, res});
  if (a.in_batch) {
    const auto perm = augment::draw_style_permutation(n, rng);
    style = gather_batch(content, perm);
    for (std::size_t i = 0; i < n; ++i) style_names[i] = contents[perm[i]].filename().string();
  } else {
    std::vector<fs::path> picked(n);
    for (std::size_t i = 0; i < n; ++i) picked[i] = styles[uniform_below(rng, styles.size())];
    style = read_images01(picked, res);
    for (std::size_t i = 0; i < n; ++i) style_names[i] = picked[i].filename().string();
  }
  const Tensor stylized = stylizer::stylize01(content, style, weights, a.alpha);

  // Rows of clean | stylized | style reference.
  const std::size_t gw = 3 * res;
  std::vector<std::uint8_t> grid(3 * n * res * gw);
  json rows = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor* cols[3] = {&content, &stylized, &style};
    for (std::size_t col = 0; col < 3; ++col) {
      const auto bytes = data::to_bytes(*cols[col], i);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < res; ++y)
          for (std::size_t x = 0; x < res; ++x)
            grid[(c * n * res + i * res + y) * gw + col * res + x] = bytes[(c * res + y) * res + x];
    }
    rows.push_back({{"content", contents[i].filename().string()}, {"style", style_names[i]}});
  }
  data::write_png(grid_path, grid, n * res, gw);
  write_text(index_path, json{{"columns", {"clean", "stylized", "style"}}, {"rows", rows}}.dump(2) + "\n");
  ctx.output(grid_path);
  ctx.output(index_path);
  std::cout << grid_path.string() << '\n';
}

// ---------------------------------------------------------------- prestylize

struct PrestylizeArgs {
  std::string style_dir, weights;
  float alpha = 1.0f;
  std::uint64_t seed = 0;
  DataOptions data;
};

void cmd_prestylize(Context& ctx, const PrestylizeArgs& a) {
  require_dir(a.style_dir, "--style-dir");
  if (data::list_images(a.style_dir).empty()) throw ConfigError("no images in " + a.style_dir);
  if (!(a.alpha >= 0.0f && a.alpha <= 1.0f)) throw ConfigError("--alpha must lie in [0, 1]");
  const auto weights = load_stylizer(a.weights);
  const auto train = load_split(a.data, data::Split::train);
  const fs::path out = ctx.out_dir / "prestylized";
  ctx.claim(out);
  ctx.manifest.seeds = {{"prestylize", a.seed}};
  ctx.manifest.config = {{"alpha", a.alpha}, {"dataset", evaluation::dataset_manifest(train)}};
  ctx.begin();
  if (fs::exists(out)) fs::remove_all(out);
  const auto r = augment::prestylize_dataset(train, a.style_dir, weights, out, a.seed, a.alpha);
  ctx.output(out);
  ctx.output(out / "manifest.json");
  std::cout << out.string() << " (" << r.dataset.size() << " images)\n";
}

// ------------------------------------------------------------- train-decoder

struct DecoderArgs {
  std::string encoder = "cifar_small";
  std::string init_weights;
  std::uint64_t init_seed = 0;
  stylizer::DecoderTrainingOptions opt;
  DataOptions data;
};

void cmd_train_decoder(Context& ctx, const DecoderArgs& a) {
  if (a.opt.batch_size < 1) throw ConfigError("--batch-size must be positive");
  const auto arch = stylizer::parse_encoder_arch(a.encoder);
  const auto start = a.init_weights.empty() ? stylizer::StylizerWeights::create(arch, a.init_seed)
                                            : (require_file(a.init_weights, "--init-weights"),
                                               stylizer::load_weights(a.init_weights, arch));
  const auto train = load_split(a.data, data::Split::train);
  start.check_resolution(train.height(), train.width());

  const fs::path weights_path = ctx.dir("checkpoints") / "decoder.styw";
  const fs::path loss_path = ctx.dir("reports") / "decoder_loss.jsonl";
  ctx.claim(weights_path);
  ctx.claim(loss_path);
  ctx.manifest.seeds = {{"decoder", a.opt.seed}, {"init", a.init_seed}};
  ctx.manifest.config = {{"encoder", a.encoder},         {"steps", a.opt.steps},
                         {"lr", a.opt.lr},               {"lr_decay", a.opt.lr_decay},
                         {"style_weight", a.opt.style_weight}, {"batch_size", a.opt.batch_size},
                         {"init_weights", a.init_weights}, {"dataset", evaluation::dataset_manifest(train)}};
  ctx.begin();

  auto write_curve = [&](const std::vector<stylizer::DecoderLossRecord>& curve) {
    std::ostringstream os;
    os.precision(17);
    for (const auto& r : curve) {
      os << json{{"step", r.step}, {"content", r.content_loss}, {"style", r.style_loss}, {"total", r.total}}.dump()
         << '\n';
    }
    write_text(loss_path, os.str());
    ctx.output(loss_path);
  };
  try {
    const auto result = stylizer::train_decoder(train, start, a.opt);
    stylizer::save_weights(result.weights, weights_path);
    ctx.output(weights_path);
    write_curve(result.curve);
  } catch (const stylizer::DecoderDivergence& e) {
    const fs::path last = ctx.dir("checkpoints") / "decoder.last_good.styw";
    stylizer::save_weights(e.last_good(), last);
    ctx.output(last);
    write_curve(e.curve());
    throw;
  }
  std::cout << weights_path.string() << '\n';
}

// ------------------------------------------------------------ corrupt-export

struct ExportArgs {
  std::uint64_t seed = 0;
  std::vector<std::string> kinds;
  std::vector<int> severities;
  DataOptions data;
};

void cmd_corrupt_export(Context& ctx, const ExportArgs& a) {
  std::vector<corruptions::CorruptionSpec> suite;
  std::vector<corruptions::Kind> kinds;
  for (const auto& k : a.kinds) kinds.push_back(corruptions::parse_kind(k));
  if (kinds.empty()) kinds.assign(corruptions::kAllKinds.begin(), corruptions::kAllKinds.end());
  std::vector<int> sev = a.severities;
  if (sev.empty()) sev = {1, 2, 3, 4, 5};
  for (auto k : kinds)
    for (int s : sev) {
      if (s < 1) throw ConfigError("exported severities must lie in 1..5");
      suite.push_back(corruptions::make_spec(k, s));
    }
  const auto test = load_split(a.data, data::Split::test);
  const fs::path out = ctx.out_dir / "corrupted";
  ctx.claim(out);
  ctx.manifest.seeds = {{"corruption", a.seed}};
  ctx.manifest.config = {{"dataset", evaluation::dataset_manifest(test)}, {"specs", suite.size()}};
  ctx.begin();
  if (fs::exists(out)) fs::remove_all(out);

  json entries = json::array();
  const std::size_t res_h = test.height(), res_w = test.width();
  for (const auto& spec : suite) {
    const fs::path dir = out / corruptions::to_string(spec.kind) / ("s" + std::to_string(spec.severity));
    for (std::size_t begin = 0; begin < test.size(); begin += evaluation::kEvalBatch) {
      const std::size_t end = std::min(test.size(), begin + evaluation::kEvalBatch);
      std::vector<std::size_t> pos(end - begin);
      std::iota(pos.begin(), pos.end(), begin);
      const auto batch = corruptions::corrupt_indexed(test.batch(pos), spec, a.seed);
      const Tensor images01 = batch.normalization.denormalize(batch.pixels);
      for (std::size_t i = 0; i < pos.size(); ++i) {
        std::ostringstream name;
        name << std::setw(6) << std::setfill('0') << batch.indices[i] << ".png";
        data::write_png(dir / name.str(), data::to_bytes(images01, i), res_h, res_w);
      }
    }
    entries.push_back({{"kind", corruptions::to_string(spec.kind)},
                       {"group", corruptions::to_string(spec.group())},
                       {"severity", spec.severity},
                       {"parameter", spec.param()},
                       {"dir", fs::relative(dir, out).generic_string()}});
  }
  json labels = json::array();
  for (std::size_t i = 0; i < test.size(); ++i) {
    labels.push_back({{"index", test.storage_index(i)}, {"label", test.label(i)}});
  }
  const json manifest = {{"seed", a.seed},
                         {"dataset", evaluation::dataset_manifest(test)},
                         {"corruptions", entries},
                         {"images", labels}};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  ctx.output(out);
  std::cout << out.string() << " (" << suite.size() * test.size() << " images)\n";
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Style-transfer data augmentation: training, evaluation and preview tools"};
  app.require_subcommand(1);
  app.set_version_flag("--version", code_version());
  Context ctx;
  std::string out_dir, level_name = "info";
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out-dir", out_dir, "output root (checkpoints/, reports/, previews/, manifests/)")->required();
    sub->add_flag("--force", ctx.force, "overwrite existing outputs");
    sub->add_option("--log-level", level_name, "debug | info | warning | error | quiet")
        ->check(CLI::IsMember({"debug", "info", "warning", "error", "quiet"}));
  };

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a classifier");
  add_common(train_cmd);
  add_train_options(train_cmd, train);

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", eval.checkpoint)->required();
  eval_cmd->add_option("--config", eval.config_path, "refuse unless this config matches the checkpoint");
  eval_cmd->add_flag("--suite", eval.suite, "corruption suite (8 kinds x 5 severities)");
  eval_cmd->add_flag("--occlusion", eval.occlusion, "center occlusion");
  eval_cmd->add_flag("--unbiased", eval.unbiased, "texture-cluster unbiased accuracy");
  eval_cmd->add_option("--unbiased-k", eval.unbiased_k, "texture clusters");
  eval_cmd->add_option("--stylizer-weights", eval.stylizer_weights, "encoder for texture features");
  eval_cmd->add_option("--seed", eval.seed, "corruption and clustering seed");
  eval_cmd->add_option("--name", eval.name, "report file stem");
  add_data_options(eval_cmd, eval.data, "evaluate a seeded subset of this many test images");

  PreviewArgs preview;
  auto* preview_cmd = app.add_subcommand("stylize-preview", "write clean | stylized | style image grids");
  add_common(preview_cmd);
  preview_cmd->add_option("--content-dir", preview.content_dir)->required();
  preview_cmd->add_option("--style-dir", preview.style_dir);
  preview_cmd->add_flag("--in-batch", preview.in_batch, "use a permutation of the contents as styles");
  preview_cmd->add_option("--weights", preview.weights)->required();
  preview_cmd->add_option("--alpha", preview.alpha);
  preview_cmd->add_option("--seed", preview.seed);
  preview_cmd->add_option("--resolution", preview.resolution);
  preview_cmd->add_option("--max-images", preview.max_images, "0 = all");

  PrestylizeArgs pre;
  auto* pre_cmd = app.add_subcommand("prestylize", "write one fixed stylization per training image");
  add_common(pre_cmd);
  pre_cmd->add_option("--style-dir", pre.style_dir)->required();
  pre_cmd->add_option("--weights", pre.weights)->required();
  pre_cmd->add_option("--alpha", pre.alpha);
  pre_cmd->add_option("--seed", pre.seed);
  add_data_options(pre_cmd, pre.data, "stylize a seeded subset of this many training images");

  DecoderArgs dec;
  auto* dec_cmd = app.add_subcommand("train-decoder", "train the stylizer decoder");
  add_common(dec_cmd);
  dec_cmd->add_option("--encoder", dec.encoder, "cifar_small | vgg_relu4_1");
  dec_cmd->add_option("--init-weights", dec.init_weights, "start from this weight file (encoder is kept)");
  dec_cmd->add_option("--init-seed", dec.init_seed, "seed for fresh weights");
  dec_cmd->add_option("--steps", dec.opt.steps);
  dec_cmd->add_option("--lr", dec.opt.lr);
  dec_cmd->add_option("--lr-decay", dec.opt.lr_decay);
  dec_cmd->add_option("--style-weight", dec.opt.style_weight);
  dec_cmd->add_option("--batch-size", dec.opt.batch_size);
  dec_cmd->add_option("--seed", dec.opt.seed);
  dec_cmd->add_option("--log-every", dec.opt.log_every);
  add_data_options(dec_cmd, dec.data, "use a seeded subset of this many training images");

  ExportArgs exp;
  auto* exp_cmd = app.add_subcommand("corrupt-export", "materialize the corrupted test set as images");
  add_common(exp_cmd);
  exp_cmd->add_option("--seed", exp.seed);
  exp_cmd->add_option("--kinds", exp.kinds, "subset of corruption kinds")->delimiter(',');
  exp_cmd->add_option("--severities", exp.severities, "subset of severities 1..5")->delimiter(',');
  add_data_options(exp_cmd, exp.data, "export a seeded subset of this many test images");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  static const std::map<std::string, LogLevel> levels = {{"debug", LogLevel::debug},
                                                         {"info", LogLevel::info},
                                                         {"warning", LogLevel::warning},
                                                         {"error", LogLevel::error},
                                                         {"quiet", LogLevel::quiet}};
  log_level() = levels.at(level_name);
  ctx.out_dir = out_dir;
  ctx.manifest.argv.assign(argv, argv + argc);

  const std::vector<std::pair<CLI::App*, std::function<void()>>> commands = {
      {train_cmd, [&] { cmd_train(ctx, train); }},
      {eval_cmd, [&] { cmd_eval(ctx, eval); }},
      {preview_cmd, [&] { cmd_stylize_preview(ctx, preview); }},
      {pre_cmd, [&] { cmd_prestylize(ctx, pre); }},
      {dec_cmd, [&] { cmd_train_decoder(ctx, dec); }},
      {exp_cmd, [&] { cmd_corrupt_export(ctx, exp); }},
  };
  for (const auto& [cmd, fn] : commands) {
    if (!cmd->parsed()) continue;
    ctx.manifest.command = cmd->get_name();
    int code = kExitOk;
    std::string error;
    try {
      fn();
    } catch (const ConfigError& e) {
      code = kExitUsage;
      error = e.what();
    } catch (const std::exception& e) {
      code = kExitRuntime;
      error = e.what();
    }
    if (!error.empty()) std::cerr << "error: " << error << '\n';
    if (ctx.begun) {
      try {
        const auto path = ctx.finish(code == kExitOk ? "ok" : "failed", error);
        log(LogLevel::info, "manifest " + path.string());
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        if (code == kExitOk) code = kExitRuntime;
      }
    }
    return code;
  }
  return kExitUsage;
}

}  // namespace styleaug::cli
