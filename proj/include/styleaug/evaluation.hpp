#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "styleaug/corruptions.hpp"
#include "styleaug/data/dataset.hpp"
#include "styleaug/stylizer.hpp"

namespace styleaug::evaluation {

// Maps a normalized N x 3 x H x W batch to N predicted labels.
using Predictor = std::function<std::vector<int>(const Tensor&)>;

inline constexpr std::size_t kEvalBatch = 256;

// Top-1 accuracy over a test split, in storage order.
double eval_clean(const Predictor& predict, const data::DatasetHandle& dataset, std::size_t batch_size = kEvalBatch);

struct CorruptionCell {
  corruptions::CorruptionSpec spec;
  double accuracy = 0.0;
};

struct CorruptionTable {
  std::vector<CorruptionCell> cells;
  std::map<std::string, double> group_means;  // keyed by group name
  double overall = 0.0;

  std::optional<double> accuracy(const corruptions::CorruptionSpec& spec) const;
};

// Accuracy for every spec; corruption noise is derived per sample from
// (seed, spec, dataset index).
CorruptionTable eval_corruptions(const Predictor& predict, const data::DatasetHandle& dataset,
                                 const std::vector<corruptions::CorruptionSpec>& suite, std::uint64_t seed,
                                 std::size_t batch_size = kEvalBatch);

// Group means and overall mean from cells.
void summarize(CorruptionTable& table);

// Centered square of side round(H/2) x round(W/2).
struct OcclusionBox {
  std::size_t y0, x0, height, width;
};
OcclusionBox occlusion_box(std::size_t h, std::size_t w);

// Sets the occlusion box to normalized black in every channel.
void occlude_inplace(Tensor& normalized, const data::Normalization& norm);

double eval_occlusion(const Predictor& predict, const data::DatasetHandle& dataset,
                      std::size_t batch_size = kEvalBatch);

// Per-image [means..., stds...] of the encoder's texture layer; N x 2C.
Tensor texture_features(const Tensor& images01, const stylizer::StylizerWeights& weights,
                        std::size_t batch_size = 64);

struct KMeansResult {
  std::vector<std::size_t> assignment;
  std::size_t k = 0;
  std::size_t iterations = 0;
  bool reseeded = false;
  std::size_t empty_clusters = 0;  // after the final attempt
};

// k-means++ initialization followed by Lloyd iterations on z-scored
// features. An empty cluster triggers one re-seeded attempt; remaining empty
// clusters are reported, not repaired.
KMeansResult kmeans(const Tensor& features, std::size_t k, std::uint64_t seed, std::size_t max_iterations = 100);

// K x L cells (texture cluster x class label), row-major.
struct UnbiasedMatrix {
  std::size_t clusters = 0, labels = 0;
  std::vector<double> cell_acc;
  std::vector<std::size_t> cell_count;
  std::vector<std::size_t> cell_correct;

  std::size_t index(std::size_t k, std::size_t l) const { return k * labels + l; }
};

struct UnbiasedResult {
  double accuracy = 0.0;  // unweighted mean over cells with count > 0
  UnbiasedMatrix matrix;
  std::size_t defined_cells = 0;
  bool degenerate_clustering = false;
  bool reseeded = false;
};

UnbiasedResult unbiased_accuracy_from(const std::vector<int>& predictions, const std::vector<int>& labels,
                                      const std::vector<std::size_t>& clusters, std::size_t num_clusters,
                                      std::size_t num_labels);

// Clusters test-set texture features into K groups and scores predictions
// per (cluster, label) cell.
UnbiasedResult unbiased_accuracy(const Predictor& predict, const data::DatasetHandle& dataset,
                                 const stylizer::StylizerWeights& weights, std::size_t k, std::uint64_t seed,
                                 std::size_t batch_size = kEvalBatch);

// ------------------------------------------------------------------ reports

inline constexpr int kReportSchemaVersion = 1;

struct EvalReport {
  int schema_version = kReportSchemaVersion;
  std::optional<double> clean_acc;
  std::optional<CorruptionTable> corruption;
  std::optional<double> occlusion_acc;
  std::optional<double> unbiased_acc;
  std::size_t unbiased_clusters = 0;
  std::size_t unbiased_defined_cells = 0;
  bool unbiased_degenerate = false;
  std::string config_hash;
  nlohmann::json seeds = nlohmann::json::object();
  std::string timestamp;
  std::string checkpoint;
  nlohmann::json dataset = nlohmann::json::object();  // see dataset_manifest

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  // Throws FormatError when an accuracy lies outside [0, 1].
  void validate() const;
};

// Source, split, size, seed, resolution, class list and normalization
// constants of a dataset handle.
nlohmann::json dataset_manifest(const data::DatasetHandle& dataset);

void write_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport load_report(const std::filesystem::path& path);

// kind, group, severity 1..5 columns, then one row per group mean.
std::string corruption_csv(const CorruptionTable& table);

// UTC time as 2026-01-31T12:00:00Z.
std::string utc_timestamp();

}  // namespace styleaug::evaluation
