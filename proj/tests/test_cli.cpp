#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "styleaug/cli.hpp"
#include "styleaug/data/dataset.hpp"
#include "styleaug/data/image_io.hpp"
#include "styleaug/data/synthetic.hpp"
#include "styleaug/evaluation.hpp"
#include "styleaug/log.hpp"
#include "styleaug/stylizer.hpp"
#include "support.hpp"

using namespace styleaug;
using styleaug::test_support::TempDir;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "styleaug");
  args.push_back("--log-level");
  args.push_back("warning");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

int run_raw(std::vector<std::string> args) {
  args.insert(args.begin(), "styleaug");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::vector<std::string> synthetic_train(const fs::path& out, const std::string& epochs = "2") {
  return {"train",          "--out-dir",          out.string(), "--dataset", "synthetic", "--resolution",
          "16",             "--synthetic-size",   "32",         "--synthetic-classes", "4", "--epochs",
          epochs,           "--batch-size",       "8"};
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<json> manifests(const fs::path& out) {
  std::vector<json> all;
  if (!fs::exists(out / "manifests")) return all;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(out / "manifests")) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    all.push_back(json::parse(in));
  }
  return all;
}

// Fresh stylizer weights written to disk.
fs::path write_weights(const fs::path& dir) {
  const auto w = stylizer::StylizerWeights::create(stylizer::EncoderArch::cifar_small, 3);
  const fs::path p = dir / "stylizer.styw";
  stylizer::save_weights(w, p);
  return p;
}

void write_images(const fs::path& dir, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<std::uint8_t> px(3 * 20 * 20);
    for (auto& v : px) v = static_cast<std::uint8_t>(uniform_below(rng, 256));
    data::write_png(dir / ("img" + std::to_string(i) + ".png"), px, 20, 20);
  }
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run_raw({}), cli::kExitUsage);
  EXPECT_EQ(run_raw({"train"}), cli::kExitUsage);  // --out-dir missing
  EXPECT_EQ(run_raw({"train", "--out-dir", "x", "--bogus"}), cli::kExitUsage);
  EXPECT_EQ(run_raw({"frobnicate"}), cli::kExitUsage);
  EXPECT_EQ(run_raw({"--help"}), cli::kExitOk);
  EXPECT_EQ(run_raw({"eval", "--help"}), cli::kExitOk);
}

TEST(Cli, TrainWritesCheckpointMetricsAndOneManifest) {
  TempDir dir("cli_train");
  const auto out = dir / "run";
  ASSERT_EQ(run_cli(synthetic_train(out)), cli::kExitOk);
  EXPECT_TRUE(fs::exists(out / "checkpoints/epoch_001.ckpt"));
  EXPECT_TRUE(fs::exists(out / "checkpoints/epoch_002.ckpt"));
  EXPECT_TRUE(fs::exists(out / "reports/metrics.jsonl"));
  EXPECT_TRUE(fs::is_directory(out / "previews"));
  const auto m = manifests(out);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0]["command"], "train");
  EXPECT_EQ(m[0]["status"], "ok");
  EXPECT_EQ(m[0]["config_hash"].get<std::string>().size(), 16u);
  EXPECT_FALSE(m[0]["code_version"].get<std::string>().empty());
  EXPECT_FALSE(m[0]["finished"].get<std::string>().empty());
  EXPECT_EQ(m[0]["seeds"]["train"], 0);
}

TEST(Cli, MalformedConfigLeavesNoCheckpoint) {
  TempDir dir("cli_badcfg");
  std::ofstream(dir / "bad.json") << R"({"epochs": 2, "learning_rate": 0.1})";
  auto args = synthetic_train(dir / "run");
  args.push_back("--config");
  args.push_back((dir / "bad.json").string());
  EXPECT_EQ(run_cli(args), cli::kExitUsage);
  EXPECT_FALSE(fs::exists(dir / "run/checkpoints"));

  std::ofstream(dir / "broken.json") << "{not json";
  args.back() = (dir / "broken.json").string();
  EXPECT_EQ(run_cli(args), cli::kExitUsage);
  EXPECT_FALSE(fs::exists(dir / "run"));
}

TEST(Cli, ConfigFileWithFlagOverride) {
  TempDir dir("cli_precedence");
  std::ofstream(dir / "c.json") << R"({"epochs": 1, "batch_size": 4, "dataset": "synthetic", "resolution": 16,
                                     "synthetic_size": 16, "synthetic_classes": 4, "base_lr": 0.01})";
  ASSERT_EQ(run_cli({"train", "--out-dir", (dir / "run").string(), "--config", (dir / "c.json").string(),
                     "--batch-size", "8"}),
            cli::kExitOk);
  const auto cfg = manifests(dir / "run")[0]["config"];
  EXPECT_EQ(cfg["batch_size"], 8);
  EXPECT_EQ(cfg["base_lr"], 0.01);
  EXPECT_EQ(cfg["momentum"], 0.9);
}

TEST(Cli, RerunGivesIdenticalMetricsAndRefusesOverwrite) {
  TempDir dir("cli_rerun");
  ASSERT_EQ(run_cli(synthetic_train(dir / "a")), cli::kExitOk);
  ASSERT_EQ(run_cli(synthetic_train(dir / "b")), cli::kExitOk);
  EXPECT_EQ(read_bytes(dir / "a/reports/metrics.jsonl"), read_bytes(dir / "b/reports/metrics.jsonl"));
  EXPECT_EQ(read_bytes(dir / "a/checkpoints/epoch_002.ckpt"), read_bytes(dir / "b/checkpoints/epoch_002.ckpt"));

  const std::string before = read_bytes(dir / "a/checkpoints/epoch_002.ckpt");
  EXPECT_EQ(run_cli(synthetic_train(dir / "a")), cli::kExitUsage);
  EXPECT_EQ(read_bytes(dir / "a/checkpoints/epoch_002.ckpt"), before);
  auto forced = synthetic_train(dir / "a");
  forced.push_back("--force");
  EXPECT_EQ(run_cli(forced), cli::kExitOk);
  // Manifests accumulate: the refused run wrote none, the forced run one more.
  EXPECT_EQ(manifests(dir / "a").size(), 2u);
}

TEST(Cli, ResumeContinuesAndRefusesChangedConfig) {
  TempDir dir("cli_resume");
  auto partial = synthetic_train(dir / "a", "3");
  partial.insert(partial.end(), {"--stop-after-epoch", "1"});
  ASSERT_EQ(run_cli(partial), cli::kExitOk);
  EXPECT_FALSE(fs::exists(dir / "a/checkpoints/epoch_002.ckpt"));
  const std::string ckpt = (dir / "a/checkpoints/epoch_001.ckpt").string();
  EXPECT_EQ(run_cli({"train", "--out-dir", (dir / "a").string(), "--resume", ckpt, "--batch-size", "16"}),
            cli::kExitUsage);
  ASSERT_EQ(run_cli({"train", "--out-dir", (dir / "a").string(), "--resume", ckpt}), cli::kExitOk);
  ASSERT_EQ(run_cli(synthetic_train(dir / "b", "3")), cli::kExitOk);
  EXPECT_EQ(read_bytes(dir / "a/reports/metrics.jsonl"), read_bytes(dir / "b/reports/metrics.jsonl"));
}

TEST(Cli, RuntimeFailureExitsTwoWithFailedManifest) {
  TempDir dir("cli_diverge");
  auto args = synthetic_train(dir / "run");
  args.insert(args.end(), {"--lr", "1e36"});
  EXPECT_EQ(run_cli(args), cli::kExitRuntime);
  const auto m = manifests(dir / "run");
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0]["status"], "failed");
  EXPECT_NE(m[0]["error"].get<std::string>().find("non-finite loss"), std::string::npos);
}

TEST(Cli, MissingStylizerWeightsIsConfigError) {
  TempDir dir("cli_noweights");
  auto args = synthetic_train(dir / "run");
  args.insert(args.end(), {"--augment", "styleaugment"});
  EXPECT_EQ(run_cli(args), cli::kExitUsage);
  args.insert(args.end(), {"--stylizer-weights", (dir / "missing.styw").string()});
  EXPECT_EQ(run_cli(args), cli::kExitUsage);
  EXPECT_FALSE(fs::exists(dir / "run"));
}

TEST(Cli, EvalReportsRequestedMetrics) {
  TempDir dir("cli_eval");
  const auto out = dir / "run";
  const auto weights = write_weights(dir.path());
  ASSERT_EQ(run_cli(synthetic_train(out, "1")), cli::kExitOk);
  const std::string ckpt = (out / "checkpoints/epoch_001.ckpt").string();

  ASSERT_EQ(run_cli({"eval", "--out-dir", out.string(), "--checkpoint", ckpt, "--name", "plain"}), cli::kExitOk);
  const auto plain = evaluation::load_report(out / "reports/plain.json");
  EXPECT_TRUE(plain.clean_acc.has_value());
  EXPECT_FALSE(plain.corruption.has_value());
  EXPECT_FALSE(plain.occlusion_acc.has_value());
  EXPECT_FALSE(plain.unbiased_acc.has_value());
  EXPECT_EQ(plain.dataset["classes"].size(), 4u);
  EXPECT_TRUE(plain.dataset.contains("normalization"));

  ASSERT_EQ(run_cli({"eval", "--out-dir", out.string(), "--checkpoint", ckpt, "--name", "full", "--suite",
                     "--occlusion", "--unbiased", "--unbiased-k", "3", "--stylizer-weights", weights.string()}),
            cli::kExitOk);
  const auto full = evaluation::load_report(out / "reports/full.json");
  EXPECT_TRUE(full.clean_acc && full.occlusion_acc && full.unbiased_acc);
  ASSERT_TRUE(full.corruption.has_value());
  EXPECT_EQ(full.corruption->cells.size(), 40u);
  EXPECT_EQ(full.unbiased_clusters, 3u);
  EXPECT_TRUE(fs::exists(out / "reports/full_corruptions.csv"));
  EXPECT_EQ(full.clean_acc, plain.clean_acc);

  EXPECT_EQ(run_cli({"eval", "--out-dir", out.string(), "--checkpoint", ckpt, "--name", "plain"}), cli::kExitUsage);
  EXPECT_EQ(run_cli({"eval", "--out-dir", out.string(), "--checkpoint", (dir / "none.ckpt").string()}),
            cli::kExitUsage);
  EXPECT_EQ(run_cli({"eval", "--out-dir", out.string(), "--checkpoint", ckpt, "--name", "u", "--unbiased"}),
            cli::kExitUsage);

  std::ofstream(dir / "other.json") << R"({"epochs": 5})";
  EXPECT_EQ(run_cli({"eval", "--out-dir", out.string(), "--checkpoint", ckpt, "--name", "m", "--config",
                     (dir / "other.json").string()}),
            cli::kExitUsage);
  EXPECT_EQ(run_cli({"eval", "--out-dir", out.string(), "--checkpoint", ckpt, "--name", "m", "--config",
                     (out / "reports/config.json").string()}),
            cli::kExitOk);
}

TEST(Cli, DataRootComesFromEnvironment) {
  TempDir dir("cli_env");
  data::write_cifar_batches(data::make_synthetic(40, 32, 10, data::Split::train, 1), dir / "cifar");
  data::write_cifar_batches(data::make_synthetic(20, 32, 10, data::Split::test, 2), dir / "cifar");
  const std::vector<std::string> args = {"train", "--out-dir", (dir / "run").string(), "--epochs", "1",
                                         "--batch-size", "8", "--lr", "0.01"};
  unsetenv(cli::kDataRootEnv);
  EXPECT_EQ(run_cli(args), cli::kExitUsage);
  setenv(cli::kDataRootEnv, (dir / "cifar").string().c_str(), 1);
  EXPECT_EQ(run_cli(args), cli::kExitOk);
  EXPECT_EQ(run_cli({"eval", "--out-dir", (dir / "run").string(), "--checkpoint",
                     (dir / "run/checkpoints/epoch_001.ckpt").string()}),
            cli::kExitOk);
  unsetenv(cli::kDataRootEnv);
}

TEST(Cli, StylizePreviewGridIsDeterministic) {
  TempDir dir("cli_preview");
  const auto weights = write_weights(dir.path());
  write_images(dir / "content", 4, 1);
  const auto out = dir / "run";
  const std::vector<std::string> args = {"stylize-preview", "--out-dir", out.string(), "--content-dir",
                                         (dir / "content").string(), "--in-batch", "--weights", weights.string(),
                                         "--resolution", "16", "--seed", "7"};
  ASSERT_EQ(run_cli(args), cli::kExitOk);
  const cv::Mat grid = cv::imread((out / "previews/preview.png").string());
  EXPECT_EQ(grid.rows, 4 * 16);
  EXPECT_EQ(grid.cols, 3 * 16);
  std::ifstream in(out / "previews/preview.json");
  EXPECT_EQ(json::parse(in)["rows"].size(), 4u);

  const std::string first = read_bytes(out / "previews/preview.png");
  auto again = args;
  again.push_back("--force");
  ASSERT_EQ(run_cli(again), cli::kExitOk);
  EXPECT_EQ(read_bytes(out / "previews/preview.png"), first);
  EXPECT_EQ(run_cli(args), cli::kExitUsage);

  fs::create_directories(dir / "empty");
  EXPECT_EQ(run_cli({"stylize-preview", "--out-dir", out.string(), "--content-dir", (dir / "empty").string(),
                     "--in-batch", "--weights", weights.string()}),
            cli::kExitUsage);
  EXPECT_EQ(run_cli({"stylize-preview", "--out-dir", out.string(), "--content-dir", (dir / "content").string(),
                     "--weights", weights.string()}),
            cli::kExitUsage);
}

TEST(Cli, PreviewAlphaZeroShowsReconstruction) {
  TempDir dir("cli_alpha0");
  const auto weights = write_weights(dir.path());
  write_images(dir / "content", 2, 2);
  write_images(dir / "styles", 2, 3);
  ASSERT_EQ(run_cli({"stylize-preview", "--out-dir", (dir / "run").string(), "--content-dir",
                     (dir / "content").string(), "--style-dir", (dir / "styles").string(), "--weights",
                     weights.string(), "--resolution", "16", "--alpha", "0"}),
            cli::kExitOk);
  const cv::Mat grid = cv::imread((dir / "run/previews/preview.png").string(), cv::IMREAD_COLOR);
  const auto w = stylizer::load_weights(weights);
  const auto files = data::list_images(dir / "content");
  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto bytes = *data::read_image_rgb(files[i], 16);
    Tensor x({1, 3, 16, 16});
    for (std::size_t k = 0; k < bytes.size(); ++k) x[k] = bytes[k] / 255.0f;
    const auto rec = data::to_bytes(w.reconstruct(x), 0);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 16; ++y)
        for (int xx = 0; xx < 16; ++xx) {
          // OpenCV stores BGR.
          const auto v = grid.at<cv::Vec3b>(static_cast<int>(i) * 16 + y, 16 + xx)[2 - c];
          ASSERT_EQ(v, rec[(static_cast<std::size_t>(c) * 16 + y) * 16 + xx]);
        }
  }
}

TEST(Cli, PrestylizeRerunIsByteIdentical) {
  TempDir dir("cli_prestylize");
  const auto weights = write_weights(dir.path());
  write_images(dir / "styles", 3, 4);
  auto args = [&](const std::string& out) {
    return std::vector<std::string>{"prestylize", "--out-dir", (dir / out).string(), "--style-dir",
                                    (dir / "styles").string(), "--weights", weights.string(), "--dataset",
                                    "synthetic", "--resolution", "16", "--synthetic-size", "12",
                                    "--synthetic-classes", "3", "--seed", "9"};
  };
  ASSERT_EQ(run_cli(args("a")), cli::kExitOk);
  ASSERT_EQ(run_cli(args("b")), cli::kExitOk);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a/prestylized"))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir / "a/prestylized"));
  EXPECT_EQ(files.size(), 13u);  // 12 images + manifest
  for (const auto& f : files) {
    if (f.filename() == "manifest.json") continue;
    EXPECT_EQ(read_bytes(dir / "a/prestylized" / f), read_bytes(dir / "b/prestylized" / f)) << f;
  }
  EXPECT_EQ(run_cli(args("a")), cli::kExitUsage);

  // The folder feeds prestylized training.
  EXPECT_EQ(run_cli({"train", "--out-dir", (dir / "t").string(), "--dataset", "synthetic", "--resolution", "16",
                     "--synthetic-size", "12", "--synthetic-classes", "3", "--epochs", "1", "--batch-size", "4",
                     "--augment", "prestylized", "--prestylized-dir", (dir / "a/prestylized").string()}),
            cli::kExitOk);
}

TEST(Cli, TrainDecoderWritesWeightsAndLossLog) {
  TempDir dir("cli_decoder");
  ASSERT_EQ(run_cli({"train-decoder", "--out-dir", (dir / "run").string(), "--dataset", "synthetic",
                     "--resolution", "16", "--synthetic-size", "32", "--steps", "100", "--batch-size", "4",
                     "--log-every", "10"}),
            cli::kExitOk);
  const auto w = stylizer::load_weights(dir / "run/checkpoints/decoder.styw");
  EXPECT_EQ(w.arch(), stylizer::EncoderArch::cifar_small);
  std::ifstream in(dir / "run/reports/decoder_loss.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) {
    EXPECT_TRUE(json::parse(line).contains("total"));
    ++lines;
  }
  EXPECT_GE(lines, 10u);
  EXPECT_EQ(run_cli({"train-decoder", "--out-dir", (dir / "x").string(), "--dataset", "synthetic", "--resolution",
                     "16", "--encoder", "alexnet"}),
            cli::kExitUsage);
}

TEST(Cli, CorruptExportWritesEverySpec) {
  TempDir dir("cli_export");
  const auto out = dir / "run";
  ASSERT_EQ(run_cli({"corrupt-export", "--out-dir", out.string(), "--dataset", "synthetic", "--resolution", "16",
                     "--synthetic-size", "40", "--synthetic-classes", "2", "--subset", "10", "--seed", "4"}),
            cli::kExitOk);
  std::size_t pngs = 0;
  for (const auto& e : fs::recursive_directory_iterator(out / "corrupted")) pngs += e.path().extension() == ".png";
  EXPECT_EQ(pngs, 400u);
  std::ifstream in(out / "corrupted/manifest.json");
  const auto m = json::parse(in);
  EXPECT_EQ(m["seed"], 4);
  EXPECT_EQ(m["corruptions"].size(), 40u);
  EXPECT_EQ(m["images"].size(), 10u);
  EXPECT_EQ(m["corruptions"][0]["kind"], "gaussian_noise");
  EXPECT_EQ(m["corruptions"][0]["severity"], 1);
  EXPECT_EQ(manifests(out).size(), 1u);
}
