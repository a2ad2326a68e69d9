#include "styleaug/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "styleaug/log.hpp"
#include "styleaug/nn/loss.hpp"
#include "styleaug/nn/optim.hpp"
#include "styleaug/nn/serialize.hpp"

namespace styleaug::trainer {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Arch arch) { return arch == Arch::resnet18 ? "resnet18" : "small_resnet_cifar"; }

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "sgd_momentum"; }

Arch parse_arch(const std::string& s) {
  if (s == "resnet18") return Arch::resnet18;
  if (s == "small_resnet_cifar") return Arch::small_resnet_cifar;
  throw ConfigError("unknown architecture '" + s + "'");
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd_momentum") return OptimizerKind::sgd_momentum;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

// ----------------------------------------------------------------- classifier

namespace {

void add_stage(nn::Sequential& net, std::size_t in, std::size_t out, std::size_t stride, Rng& rng) {
  net.add<nn::BasicBlock>(in, out, stride, rng);
  net.add<nn::BasicBlock>(out, out, 1, rng);
}

nn::Sequential build(Arch arch, std::size_t num_classes, std::size_t resolution, std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::init, 3);
  nn::Sequential net;
  if (arch == Arch::resnet18) {
    if (resolution <= 64) {
      net.add<nn::Conv2d>(3, 64, 3, 1, 1, nn::Padding::zero, false, rng);
      net.add<nn::BatchNorm2d>(64);
      net.add<nn::ReLU>();
    } else {
      net.add<nn::Conv2d>(3, 64, 7, 2, 3, nn::Padding::zero, false, rng);
      net.add<nn::BatchNorm2d>(64);
      net.add<nn::ReLU>();
      net.add<nn::MaxPool2d>(3, 2, 1);
    }
    add_stage(net, 64, 64, 1, rng);
    add_stage(net, 64, 128, 2, rng);
    add_stage(net, 128, 256, 2, rng);
    add_stage(net, 256, 512, 2, rng);
    net.add<nn::GlobalAvgPool>();
    net.add<nn::Linear>(512, num_classes, rng);
  } else {
    net.add<nn::Conv2d>(3, 16, 3, 1, 1, nn::Padding::zero, false, rng);
    net.add<nn::BatchNorm2d>(16);
    net.add<nn::ReLU>();
    add_stage(net, 16, 16, 1, rng);
    add_stage(net, 16, 32, 2, rng);
    add_stage(net, 32, 64, 2, rng);
    net.add<nn::GlobalAvgPool>();
    net.add<nn::Linear>(64, num_classes, rng);
  }
  return net;
}

}  // namespace

Classifier::Classifier(Arch arch, std::size_t num_classes, std::size_t resolution, std::uint64_t seed)
    : arch_(arch), num_classes_(num_classes), resolution_(resolution) {
  if (num_classes < 2) throw ConfigError("classifier needs at least 2 classes");
  if (resolution < 8) throw ConfigError("classifier resolution must be at least 8");
  net_ = build(arch, num_classes, resolution, seed);
}

Tensor Classifier::logits(const Tensor& x) const {
  if (x.rank() != 4 || x.c() != 3 || x.h() != resolution_ || x.w() != resolution_) {
    throw ShapeError("classifier expects N x 3 x " + std::to_string(resolution_) + " x " +
                     std::to_string(resolution_) + " input, got " + x.shape_string());
  }
  return net_.forward(x, nullptr, false);
}

std::vector<int> Classifier::predict(const Tensor& x, std::size_t chunk) const {
  std::vector<int> out;
  out.reserve(x.n());
  for (std::size_t begin = 0; begin < x.n(); begin += chunk) {
    const std::size_t end = std::min(x.n(), begin + chunk);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const auto part = nn::argmax_rows(logits(gather_batch(x, idx)));
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::uint64_t Classifier::fingerprint() const { return stylizer::fingerprint(net_); }

// --------------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("base_lr must be positive");
  if (schedule != "cosine") throw ConfigError("unsupported schedule '" + schedule + "' (only cosine)");
  if (augment::doubles_batch(augment_mode) && batch_size % 2 != 0) {
    throw ConfigError("batch_size must be even when the batch is doubled by stylization");
  }
  if (!(alpha >= 0.0f && alpha <= 1.0f)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(label_mix_lambda >= 0.0f && label_mix_lambda <= 1.0f)) {
    throw ConfigError("label_mix_lambda must lie in [0, 1]");
  }
  if (!(mix_beta > 0.0)) throw ConfigError("mix_beta must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (dataset != "cifar10" && dataset != "folder" && dataset != "synthetic") {
    throw ConfigError("unknown dataset kind '" + dataset + "'");
  }
  if (resolution < 8) throw ConfigError("resolution must be at least 8");
  if (dataset == "synthetic" && (synthetic_size == 0 || synthetic_classes < 2)) {
    throw ConfigError("synthetic dataset needs a positive size and at least 2 classes");
  }
}

json TrainConfig::to_json() const {
  return json{{"arch", to_string(arch)},
              {"epochs", epochs},
              {"batch_size", batch_size},
              {"base_lr", base_lr},
              {"optimizer", to_string(optimizer)},
              {"schedule", schedule},
              {"augment_mode", augment::to_string(augment_mode)},
              {"alpha", alpha},
              {"seed", seed},
              {"momentum", momentum},
              {"weight_decay", weight_decay},
              {"label_mix_lambda", label_mix_lambda},
              {"mix_beta", mix_beta},
              {"dataset", dataset},
              {"data_root", data_root},
              {"resolution", resolution},
              {"train_subset", train_subset},
              {"synthetic_size", synthetic_size},
              {"synthetic_classes", synthetic_classes},
              {"stylizer_weights", stylizer_weights}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "arch") c.arch = parse_arch(value.get<std::string>());
      else if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "base_lr") c.base_lr = value.get<double>();
      else if (key == "optimizer") c.optimizer = parse_optimizer(value.get<std::string>());
      else if (key == "schedule") c.schedule = value.get<std::string>();
      else if (key == "augment_mode") c.augment_mode = augment::parse_mode(value.get<std::string>());
      else if (key == "alpha") c.alpha = value.get<float>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "momentum") c.momentum = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "label_mix_lambda") c.label_mix_lambda = value.get<float>();
      else if (key == "mix_beta") c.mix_beta = value.get<double>();
      else if (key == "dataset") c.dataset = value.get<std::string>();
      else if (key == "data_root") c.data_root = value.get<std::string>();
      else if (key == "resolution") c.resolution = value.get<std::size_t>();
      else if (key == "train_subset") c.train_subset = value.get<std::size_t>();
      else if (key == "synthetic_size") c.synthetic_size = value.get<std::size_t>();
      else if (key == "synthetic_classes") c.synthetic_classes = value.get<std::size_t>();
      else if (key == "stylizer_weights") c.stylizer_weights = value.get<std::string>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed train config: ") + e.what());
  }
  return c;
}

std::string TrainConfig::hash() const {
  // The dataset root is machine-local; moving the data must not block a resume.
  auto j = to_json();
  j.erase("data_root");
  return nn::hex64(nn::fnv1a(j.dump()));
}

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
  if (total_steps == 0) return base_lr;
  if (step > total_steps) throw ConfigError("cosine_lr: step beyond total_steps");
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

// -------------------------------------------------------------------- metrics

json MetricRecord::to_json() const {
  json j{{"type", type}, {"step", step}, {"epoch", epoch}, {"loss", loss}, {"lr", lr}};
  if (type == "epoch") {
    j["train_acc"] = train_acc;
  } else {
    j["samples"] = samples;
    j["inputs"] = inputs;
  }
  return j;
}

MetricRecord MetricRecord::from_json(const json& j) {
  MetricRecord r;
  r.type = j.at("type").get<std::string>();
  r.step = j.at("step").get<std::size_t>();
  r.epoch = j.at("epoch").get<std::size_t>();
  r.loss = j.at("loss").get<double>();
  r.lr = j.at("lr").get<double>();
  r.train_acc = j.value("train_acc", 0.0);
  r.samples = j.value("samples", std::size_t{0});
  r.inputs = j.value("inputs", std::size_t{0});
  return r;
}

std::string metrics_to_jsonl(const std::vector<MetricRecord>& log) {
  std::string out;
  for (const auto& r : log) out += r.to_json().dump() + "\n";
  return out;
}

std::vector<MetricRecord> metrics_from_jsonl(const std::string& text) {
  std::vector<MetricRecord> log;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      log.push_back(MetricRecord::from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError("metrics log line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return log;
}

// ------------------------------------------------------------------- training

std::size_t clean_per_step(const TrainConfig& config) {
  return augment::doubles_batch(config.augment_mode) ? config.batch_size / 2 : config.batch_size;
}

namespace {

struct State {
  Classifier model;
  std::unique_ptr<nn::Optimizer> optimizer;
  std::size_t epochs_completed = 0;
  std::size_t global_step = 0;
  std::vector<MetricRecord> log;
};

std::unique_ptr<nn::Optimizer> make_optimizer(const TrainConfig& config, const std::vector<nn::ParamRef>& params) {
  if (config.optimizer == OptimizerKind::adam) {
    return std::make_unique<nn::Adam>(params, 0.9, 0.999, 1e-8, config.weight_decay);
  }
  return std::make_unique<nn::Sgd>(params, config.momentum, config.weight_decay);
}

// Inputs and soft targets of one optimizer step.
struct StepInputs {
  Tensor pixels;
  std::vector<MixTarget> targets;
  std::size_t samples = 0;
  std::vector<std::size_t> style_assignment;
};

StepInputs prepare(const TrainConfig& config, const data::ImageBatch& batch,
                   const stylizer::StylizerWeights* stylizer, std::size_t epoch, std::size_t step) {
  StepInputs in;
  in.samples = batch.size();
  Rng rng = make_rng(config.seed, Stream::style, epoch, step);
  switch (config.augment_mode) {
    case augment::Mode::none:
    case augment::Mode::prestylized:
      in.pixels = batch.pixels;
      for (int l : batch.labels) in.targets.push_back(MixTarget::hard(l));
      break;
    case augment::Mode::styleaugment: {
      auto aug = augment::style_augment(batch, *stylizer, rng, config.alpha);
      in.targets = aug.targets();
      in.style_assignment = std::move(aug.style_assignment);
      in.pixels = std::move(aug.pixels);
      break;
    }
    case augment::Mode::label_mix: {
      auto [aug, targets] = augment::style_augment_label_mix(batch, *stylizer, rng, config.label_mix_lambda,
                                                             config.alpha);
      in.pixels = std::move(aug.pixels);
      in.targets = std::move(targets);
      in.style_assignment = std::move(aug.style_assignment);
      break;
    }
    case augment::Mode::mixup: {
      auto mixed = augment::mixup_batch(batch, rng, config.mix_beta);
      in.pixels = std::move(mixed.batch.pixels);
      in.targets = std::move(mixed.targets);
      break;
    }
    case augment::Mode::cutmix: {
      auto mixed = augment::cutmix_batch(batch, rng, config.mix_beta);
      in.pixels = std::move(mixed.batch.pixels);
      in.targets = std::move(mixed.targets);
      break;
    }
  }
  return in;
}

std::string batch_diagnostics(const Tensor& x, const Tensor& logits) {
  double sum = 0.0, sq = 0.0, max_logit = 0.0;
  for (float v : x.values()) {
    sum += v;
    sq += static_cast<double>(v) * v;
  }
  for (float v : logits.values()) max_logit = std::max(max_logit, static_cast<double>(std::fabs(v)));
  const double n = static_cast<double>(std::max<std::size_t>(1, x.size()));
  const double mean = sum / n;
  std::ostringstream os;
  os << "input mean " << mean << ", input std " << std::sqrt(std::max(0.0, sq / n - mean * mean))
     << ", max |logit| " << max_logit << ", logits finite " << (logits.all_finite() ? "yes" : "no");
  return os.str();
}

Checkpoint snapshot(const TrainConfig& config, State& st) {
  Checkpoint ck;
  ck.config = config;
  ck.config_hash = config.hash();
  ck.epochs_completed = st.epochs_completed;
  ck.global_step = st.global_step;
  // Every random stream is derived from (seed, purpose, epoch, step), so the
  // position in the run is the full generator state.
  ck.rng_state = json{{"seed", config.seed}, {"next_epoch", st.epochs_completed}, {"global_step", st.global_step}}
                     .dump();
  for (auto& p : st.model.net().parameters()) ck.parameters.push_back(*p.value);
  for (auto& b : st.model.net().buffers()) ck.buffers.push_back(*b.value);
  ck.optimizer = st.optimizer->name();
  ck.optimizer_steps = st.optimizer->steps();
  ck.optimizer_state = st.optimizer->state();
  ck.log = st.log;
  ck.num_classes = st.model.num_classes();
  return ck;
}

void check_inputs(const TrainConfig& config, const data::DatasetHandle& train_set,
                  const stylizer::StylizerWeights* stylizer) {
  config.validate();
  if (train_set.height() != config.resolution || train_set.width() != config.resolution) {
    throw ConfigError("config resolution " + std::to_string(config.resolution) + " does not match dataset images " +
                      std::to_string(train_set.height()) + "x" + std::to_string(train_set.width()));
  }
  if (augment::needs_stylizer(config.augment_mode)) {
    if (stylizer == nullptr) {
      throw ConfigError("augment mode " + augment::to_string(config.augment_mode) + " needs stylizer weights");
    }
    stylizer->check_resolution(config.resolution, config.resolution);
  }
  if (train_set.split() != data::Split::train) throw ConfigError("training needs the train split");
}

TrainResult run(const TrainConfig& config, const data::DatasetHandle& train_set,
                const stylizer::StylizerWeights* stylizer, const TrainOptions& options, State st) {
  const data::DatasetHandle* source = &train_set;
  if (config.augment_mode == augment::Mode::prestylized) {
    if (options.prestylized == nullptr) throw ConfigError("prestylized mode needs a prestylized dataset");
    source = options.prestylized;
  }
  const data::DatasetHandle ds = source->with_seed(config.seed);
  const std::size_t clean = clean_per_step(config);
  const std::size_t steps_per_epoch = ds.size() / clean;
  if (steps_per_epoch == 0) {
    throw ConfigError("dataset of " + std::to_string(ds.size()) + " samples is smaller than one batch of " +
                      std::to_string(clean));
  }
  const std::size_t total_steps = steps_per_epoch * config.epochs;
  const std::size_t last_epoch =
      options.stop_after_epoch ? std::min(options.stop_after_epoch, config.epochs) : config.epochs;

  std::uint64_t stylizer_before = 0;
  if (stylizer) stylizer_before = stylizer->encoder_fingerprint() ^ stylizer->decoder_fingerprint();

  auto params = st.model.net().parameters();
  auto grads = nn::make_gradients(st.model.net());

  for (std::size_t epoch = st.epochs_completed; epoch < last_epoch; ++epoch) {
    double loss_sum = 0.0, lr = 0.0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const auto batch = data::next_batch(ds, clean, epoch, step);
      if (!batch) throw Error("internal: batch " + std::to_string(step) + " of epoch missing");
      const StepInputs in = prepare(config, *batch, stylizer, epoch, step);
      if (options.on_assignment) {
        std::vector<std::size_t> style;
        for (auto j : in.style_assignment) style.push_back(batch->indices[j]);
        options.on_assignment(epoch, step, batch->indices, style);
      }

      lr = cosine_lr(st.global_step, total_steps, config.base_lr);
      nn::Saved saved;
      const Tensor logits = st.model.net().forward(in.pixels, &saved, true);
      const auto loss = nn::softmax_cross_entropy(logits, in.targets);
      if (!std::isfinite(loss.loss)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                              " (global " + std::to_string(st.global_step) + "), lr " + std::to_string(lr) + "; " +
                              batch_diagnostics(in.pixels, logits));
      }
      const auto preds = nn::argmax_rows(logits);
      for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == in.targets[i].label_a;
      seen += preds.size();

      nn::zero_gradients(grads);
      st.model.net().backward(loss.grad, saved, grads);
      st.model.net().update_running_stats(saved);
      st.optimizer->step(params, grads, lr);

      MetricRecord rec;
      rec.type = "step";
      rec.step = st.global_step;
      rec.epoch = epoch;
      rec.loss = loss.loss;
      rec.lr = lr;
      rec.samples = in.samples;
      rec.inputs = in.pixels.n();
      st.log.push_back(rec);
      if (options.on_record) options.on_record(rec);
      loss_sum += loss.loss;
      ++st.global_step;
    }
    MetricRecord er;
    er.type = "epoch";
    er.step = st.global_step;
    er.epoch = epoch;
    er.loss = loss_sum / static_cast<double>(steps_per_epoch);
    er.lr = lr;
    er.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    st.log.push_back(er);
    if (options.on_record) options.on_record(er);
    st.epochs_completed = epoch + 1;
    log_info("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(config.epochs) + " loss " +
             std::to_string(er.loss) + " train_acc " + std::to_string(er.train_acc));

    const bool due = options.checkpoint_every > 0 && (st.epochs_completed % options.checkpoint_every == 0 ||
                                                      st.epochs_completed == last_epoch);
    if (!options.checkpoint_dir.empty() && due) {
      std::ostringstream name;
      name << "epoch_" << std::setw(3) << std::setfill('0') << st.epochs_completed << ".ckpt";
      save_checkpoint(snapshot(config, st), options.checkpoint_dir / name.str());
    }
  }

  if (stylizer && (stylizer->encoder_fingerprint() ^ stylizer->decoder_fingerprint()) != stylizer_before) {
    throw Error("stylizer weights changed during classifier training");
  }
  return TrainResult{std::move(st.model), std::move(st.log), st.epochs_completed};
}

}  // namespace

TrainResult train(const TrainConfig& config, const data::DatasetHandle& train_set,
                  const stylizer::StylizerWeights* stylizer, const TrainOptions& options) {
  check_inputs(config, train_set, stylizer);
  State st{Classifier(config.arch, train_set.num_classes(), config.resolution, config.seed), nullptr, 0, 0, {}};
  st.optimizer = make_optimizer(config, st.model.net().parameters());
  return run(config, train_set, stylizer, options, std::move(st));
}

// ---------------------------------------------------------------- checkpoints

namespace {
constexpr char kCheckpointMagic[8] = {'S', 'T', 'Y', 'A', 'U', 'G', 'C', '\0'};

void write_tensors(nn::BinaryWriter& w, const std::vector<Tensor>& ts) {
  w.u64(ts.size());
  for (const auto& t : ts) w.tensor(t);
}

std::vector<Tensor> read_tensors(nn::BinaryReader& r) {
  const std::uint64_t n = r.u64();
  if (n > (1u << 20)) throw FormatError("checkpoint: implausible tensor count");
  std::vector<Tensor> ts;
  ts.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) ts.push_back(r.tensor());
  return ts;
}

void assign(std::vector<nn::ParamRef> refs, const std::vector<Tensor>& values, const char* what) {
  if (refs.size() != values.size()) {
    throw FormatError(std::string("checkpoint: ") + what + " count " + std::to_string(values.size()) +
                      " does not match model (" + std::to_string(refs.size()) + ")");
  }
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (!refs[i].value->same_shape(values[i])) {
      throw FormatError(std::string("checkpoint: ") + what + " '" + refs[i].name + "' has shape " +
                        values[i].shape_string() + ", model expects " + refs[i].value->shape_string());
    }
    *refs[i].value = values[i];
  }
}
}  // namespace

void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error("cannot write checkpoint " + tmp.string());
    nn::BinaryWriter w(os);
    w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.str(ck.config.to_json().dump());
    w.str(ck.config_hash);
    w.u64(ck.epochs_completed);
    w.u64(ck.global_step);
    w.str(ck.rng_state);
    w.u64(ck.num_classes);
    write_tensors(w, ck.parameters);
    write_tensors(w, ck.buffers);
    w.str(ck.optimizer);
    w.u64(ck.optimizer_steps);
    write_tensors(w, ck.optimizer_state);
    w.str(metrics_to_jsonl(ck.log));
    if (!os) throw Error("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path.string());
  nn::BinaryReader r(is, "checkpoint " + path.string());
  char magic[8];
  r.raw(magic, sizeof magic);
  if (!std::equal(magic, magic + 8, kCheckpointMagic)) throw FormatError(path.string() + " is not a checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  try {
    ck.config = TrainConfig::from_json(json::parse(r.str()));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  ck.config_hash = r.str();
  ck.epochs_completed = r.u64();
  ck.global_step = r.u64();
  ck.rng_state = r.str();
  ck.num_classes = r.u64();
  ck.parameters = read_tensors(r);
  ck.buffers = read_tensors(r);
  ck.optimizer = r.str();
  ck.optimizer_steps = r.u64();
  ck.optimizer_state = read_tensors(r);
  ck.log = metrics_from_jsonl(r.str());
  if (!r.at_end()) throw FormatError("checkpoint " + path.string() + " has trailing bytes");
  if (ck.config_hash != ck.config.hash()) throw FormatError("checkpoint config hash does not match its config");
  return ck;
}

Classifier classifier_from_checkpoint(const Checkpoint& ck) {
  Classifier model(ck.config.arch, ck.num_classes, ck.config.resolution, ck.config.seed);
  assign(model.net().parameters(), ck.parameters, "parameter");
  assign(model.net().buffers(), ck.buffers, "buffer");
  return model;
}

TrainResult resume(const Checkpoint& ck, const TrainConfig& config, const data::DatasetHandle& train_set,
                   const stylizer::StylizerWeights* stylizer, const TrainOptions& options) {
  if (config.hash() != ck.config_hash) {
    throw ConfigError("refusing to resume: config hash " + config.hash() + " differs from checkpoint's " +
                      ck.config_hash);
  }
  check_inputs(config, train_set, stylizer);
  if (train_set.num_classes() != ck.num_classes) throw ConfigError("dataset class count differs from checkpoint");
  State st{classifier_from_checkpoint(ck), nullptr, ck.epochs_completed, ck.global_step, ck.log};
  st.optimizer = make_optimizer(config, st.model.net().parameters());
  if (st.optimizer->name() != ck.optimizer) throw FormatError("checkpoint optimizer differs from config");
  if (st.optimizer->state().size() != ck.optimizer_state.size()) {
    throw FormatError("checkpoint optimizer state does not match the model");
  }
  for (std::size_t i = 0; i < ck.optimizer_state.size(); ++i) {
    if (!st.optimizer->state()[i].same_shape(ck.optimizer_state[i])) {
      throw FormatError("checkpoint optimizer state tensor " + std::to_string(i) + " has the wrong shape");
    }
    st.optimizer->state()[i] = ck.optimizer_state[i];
  }
  st.optimizer->set_steps(ck.optimizer_steps);
  return run(config, train_set, stylizer, options, std::move(st));
}

}  // namespace styleaug::trainer
