#include "styleaug/evaluation.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace styleaug::evaluation {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_test(const data::DatasetHandle& dataset, const char* what) {
  if (dataset.split() != data::Split::test) throw ConfigError(std::string(what) + " evaluates the test split");
  if (dataset.size() == 0) throw ConfigError(std::string(what) + ": empty dataset");
}

// Calls fn(batch) over the dataset in storage order.
template <typename Fn>
void for_each_batch(const data::DatasetHandle& dataset, std::size_t batch_size, Fn&& fn) {
  for (std::size_t begin = 0; begin < dataset.size(); begin += batch_size) {
    const std::size_t end = std::min(dataset.size(), begin + batch_size);
    std::vector<std::size_t> pos(end - begin);
    std::iota(pos.begin(), pos.end(), begin);
    fn(dataset.batch(pos));
  }
}

std::size_t count_correct(const Predictor& predict, const data::ImageBatch& batch) {
  const auto preds = predict(batch.pixels);
  if (preds.size() != batch.size()) throw ShapeError("predictor returned the wrong number of predictions");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == batch.labels[i];
  return correct;
}

}  // namespace

double eval_clean(const Predictor& predict, const data::DatasetHandle& dataset, std::size_t batch_size) {
  require_test(dataset, "eval_clean");
  std::size_t correct = 0;
  for_each_batch(dataset, batch_size, [&](const data::ImageBatch& b) { correct += count_correct(predict, b); });
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

// ---------------------------------------------------------------- corruption

std::optional<double> CorruptionTable::accuracy(const corruptions::CorruptionSpec& spec) const {
  for (const auto& c : cells) {
    if (c.spec == spec) return c.accuracy;
  }
  return std::nullopt;
}

void summarize(CorruptionTable& table) {
  table.group_means.clear();
  std::map<std::string, std::pair<double, std::size_t>> acc;
  double total = 0.0;
  for (const auto& c : table.cells) {
    auto& [sum, n] = acc[corruptions::to_string(c.spec.group())];
    sum += c.accuracy;
    ++n;
    total += c.accuracy;
  }
  for (const auto& [group, sn] : acc) table.group_means[group] = sn.first / static_cast<double>(sn.second);
  table.overall = table.cells.empty() ? 0.0 : total / static_cast<double>(table.cells.size());
}

CorruptionTable eval_corruptions(const Predictor& predict, const data::DatasetHandle& dataset,
                                 const std::vector<corruptions::CorruptionSpec>& suite, std::uint64_t seed,
                                 std::size_t batch_size) {
  require_test(dataset, "eval_corruptions");
  CorruptionTable table;
  for (const auto& spec : suite) {
    if (table.accuracy(spec)) throw ConfigError("corruption suite lists " + spec.name() + " twice");
    std::size_t correct = 0;
    for_each_batch(dataset, batch_size, [&](const data::ImageBatch& b) {
      correct += count_correct(predict, corruptions::corrupt_indexed(b, spec, seed));
    });
    table.cells.push_back({spec, static_cast<double>(correct) / static_cast<double>(dataset.size())});
  }
  summarize(table);
  return table;
}

// ----------------------------------------------------------------- occlusion

OcclusionBox occlusion_box(std::size_t h, std::size_t w) {
  const auto sh = static_cast<std::size_t>(std::lround(static_cast<double>(h) / 2.0));
  const auto sw = static_cast<std::size_t>(std::lround(static_cast<double>(w) / 2.0));
  return {(h - sh) / 2, (w - sw) / 2, sh, sw};
}

void occlude_inplace(Tensor& x, const data::Normalization& norm) {
  const auto box = occlusion_box(x.h(), x.w());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      const float black = norm.map(c, 0.0f);
      for (std::size_t y = box.y0; y < box.y0 + box.height; ++y)
        for (std::size_t xx = box.x0; xx < box.x0 + box.width; ++xx) x.at(n, c, y, xx) = black;
    }
  }
}

double eval_occlusion(const Predictor& predict, const data::DatasetHandle& dataset, std::size_t batch_size) {
  require_test(dataset, "eval_occlusion");
  std::size_t correct = 0;
  for_each_batch(dataset, batch_size, [&](data::ImageBatch b) {
    occlude_inplace(b.pixels, b.normalization);
    correct += count_correct(predict, b);
  });
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

// ------------------------------------------------------------------ texture

Tensor texture_features(const Tensor& images01, const stylizer::StylizerWeights& weights, std::size_t batch_size) {
  weights.check_resolution(images01.h(), images01.w());
  const std::size_t layer = weights.texture_layer();
  const std::array<std::size_t, 1> taps{layer};
  Tensor out;
  for (std::size_t begin = 0; begin < images01.n(); begin += batch_size) {
    const std::size_t end = std::min(images01.n(), begin + batch_size);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const auto feats = weights.encoder().forward_taps(gather_batch(images01, idx), taps, layer + 1, nullptr, false);
    const auto stats = stylizer::instance_stats(feats.front());
    const std::size_t c = stats.mean.dim(1);
    if (out.empty()) out = Tensor({images01.n(), 2 * c});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      float* row = out.data() + (begin + i) * 2 * c;
      for (std::size_t k = 0; k < c; ++k) {
        row[k] = stats.mean[i * c + k];
        row[c + k] = stats.std[i * c + k];
      }
    }
  }
  return out;
}

// ------------------------------------------------------------------- kmeans

namespace {

struct Attempt {
  std::vector<std::size_t> assignment;
  std::size_t iterations = 0;
  std::size_t empty = 0;
};

double sqdist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

Attempt lloyd(const std::vector<double>& x, std::size_t n, std::size_t d, std::size_t k, Rng& rng,
              std::size_t max_iterations) {
  std::vector<double> centers(k * d);
  // k-means++ seeding.
  const std::size_t first = static_cast<std::size_t>(uniform_below(rng, n));
  std::copy_n(x.begin() + static_cast<long>(first * d), d, centers.begin());
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      best[i] = std::min(best[i], sqdist(&x[i * d], &centers[(c - 1) * d], d));
      total += best[i];
    }
    std::size_t pick = n - 1;
    if (total > 0.0) {
      double r = uniform01(rng) * total;
      for (std::size_t i = 0; i < n; ++i) {
        r -= best[i];
        if (r < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<std::size_t>(uniform_below(rng, n));
    }
    std::copy_n(x.begin() + static_cast<long>(pick * d), d, centers.begin() + static_cast<long>(c * d));
  }

  Attempt a;
  a.assignment.assign(n, k);
  std::vector<std::size_t> count(k);
  for (a.iterations = 0; a.iterations < max_iterations;) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t arg = 0;
      double dmin = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dist = sqdist(&x[i * d], &centers[c * d], d);
        if (dist < dmin) {
          dmin = dist;
          arg = c;
        }
      }
      if (a.assignment[i] != arg) {
        a.assignment[i] = arg;
        changed = true;
      }
    }
    ++a.iterations;
    if (!changed) break;
    std::vector<double> sum(k * d, 0.0);
    std::fill(count.begin(), count.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[a.assignment[i]];
      for (std::size_t j = 0; j < d; ++j) sum[a.assignment[i] * d + j] += x[i * d + j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] == 0) continue;  // keep the old center
      for (std::size_t j = 0; j < d; ++j) centers[c * d + j] = sum[c * d + j] / static_cast<double>(count[c]);
    }
  }
  std::fill(count.begin(), count.end(), 0);
  for (auto c : a.assignment) ++count[c];
  a.empty = static_cast<std::size_t>(std::count(count.begin(), count.end(), std::size_t{0}));
  return a;
}

}  // namespace

KMeansResult kmeans(const Tensor& features, std::size_t k, std::uint64_t seed, std::size_t max_iterations) {
  if (features.rank() != 2) throw ShapeError("kmeans expects an N x D feature matrix");
  if (k < 1) throw ConfigError("kmeans needs k >= 1");
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (n == 0) throw ConfigError("kmeans: no samples");

  // z-score each dimension; constant dimensions become zero.
  std::vector<double> x(n * d);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += features[i * d + j];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) sq += (features[i * d + j] - mean) * (features[i * d + j] - mean);
    const double sd = std::sqrt(sq / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) x[i * d + j] = sd > 1e-12 ? (features[i * d + j] - mean) / sd : 0.0;
  }

  Rng rng = make_rng(seed, Stream::kmeans, 0);
  Attempt a = lloyd(x, n, d, k, rng, max_iterations);
  KMeansResult r;
  if (a.empty > 0) {
    Rng again = make_rng(seed, Stream::kmeans, 1);
    a = lloyd(x, n, d, k, again, max_iterations);
    r.reseeded = true;
  }
  r.assignment = std::move(a.assignment);
  r.k = k;
  r.iterations = a.iterations;
  r.empty_clusters = a.empty;
  return r;
}

// ----------------------------------------------------------------- unbiased

UnbiasedResult unbiased_accuracy_from(const std::vector<int>& predictions, const std::vector<int>& labels,
                                      const std::vector<std::size_t>& clusters, std::size_t num_clusters,
                                      std::size_t num_labels) {
  if (predictions.size() != labels.size() || clusters.size() != labels.size()) {
    throw ShapeError("unbiased accuracy: predictions, labels and clusters differ in length");
  }
  UnbiasedResult r;
  auto& m = r.matrix;
  m.clusters = num_clusters;
  m.labels = num_labels;
  m.cell_acc.assign(num_clusters * num_labels, 0.0);
  m.cell_count.assign(num_clusters * num_labels, 0);
  m.cell_correct.assign(num_clusters * num_labels, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_labels || clusters[i] >= num_clusters) {
      throw ShapeError("unbiased accuracy: label or cluster out of range at sample " + std::to_string(i));
    }
    const std::size_t cell = m.index(clusters[i], static_cast<std::size_t>(labels[i]));
    ++m.cell_count[cell];
    m.cell_correct[cell] += predictions[i] == labels[i];
  }
  double sum = 0.0;
  for (std::size_t cell = 0; cell < m.cell_count.size(); ++cell) {
    if (m.cell_count[cell] == 0) continue;
    m.cell_acc[cell] = static_cast<double>(m.cell_correct[cell]) / static_cast<double>(m.cell_count[cell]);
    sum += m.cell_acc[cell];
    ++r.defined_cells;
  }
  r.accuracy = r.defined_cells ? sum / static_cast<double>(r.defined_cells) : 0.0;
  return r;
}

UnbiasedResult unbiased_accuracy(const Predictor& predict, const data::DatasetHandle& dataset,
                                 const stylizer::StylizerWeights& weights, std::size_t k, std::uint64_t seed,
                                 std::size_t batch_size) {
  require_test(dataset, "unbiased_accuracy");
  if (k < 2) throw ConfigError("unbiased accuracy needs K >= 2");
  std::vector<int> preds, labels;
  Tensor features;
  for_each_batch(dataset, batch_size, [&](const data::ImageBatch& b) {
    const auto p = predict(b.pixels);
    preds.insert(preds.end(), p.begin(), p.end());
    labels.insert(labels.end(), b.labels.begin(), b.labels.end());
    Tensor f = texture_features(b.normalization.denormalize(b.pixels), weights);
    if (features.empty()) {
      features = std::move(f);
    } else {
      std::vector<float> data = features.storage();
      data.insert(data.end(), f.storage().begin(), f.storage().end());
      features = Tensor({features.dim(0) + f.dim(0), f.dim(1)}, std::move(data));
    }
  });
  const auto km = kmeans(features, k, seed);
  auto r = unbiased_accuracy_from(preds, labels, km.assignment, k, dataset.num_classes());
  r.reseeded = km.reseeded;
  r.degenerate_clustering = km.empty_clusters > 0;
  return r;
}

// ------------------------------------------------------------------ reports

namespace {

json table_to_json(const CorruptionTable& t) {
  json cells = json::array();
  for (const auto& c : t.cells) {
    cells.push_back({{"kind", corruptions::to_string(c.spec.kind)},
                     {"group", corruptions::to_string(c.spec.group())},
                     {"severity", c.spec.severity},
                     {"accuracy", c.accuracy}});
  }
  return {{"cells", cells}, {"group_means", t.group_means}, {"overall", t.overall}};
}

CorruptionTable table_from_json(const json& j) {
  CorruptionTable t;
  for (const auto& c : j.at("cells")) {
    t.cells.push_back({corruptions::make_spec(corruptions::parse_kind(c.at("kind").get<std::string>()),
                                              c.at("severity").get<int>()),
                       c.at("accuracy").get<double>()});
  }
  t.group_means = j.at("group_means").get<std::map<std::string, double>>();
  t.overall = j.at("overall").get<double>();
  return t;
}

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> opt_double(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

json EvalReport::to_json() const {
  return {{"schema_version", schema_version},
          {"clean_acc", opt(clean_acc)},
          {"corruption", corruption ? table_to_json(*corruption) : json(nullptr)},
          {"occlusion_acc", opt(occlusion_acc)},
          {"unbiased_acc", opt(unbiased_acc)},
          {"unbiased_clusters", unbiased_clusters},
          {"unbiased_defined_cells", unbiased_defined_cells},
          {"unbiased_degenerate", unbiased_degenerate},
          {"config_hash", config_hash},
          {"seeds", seeds},
          {"timestamp", timestamp},
          {"checkpoint", checkpoint},
          {"dataset", dataset}};
}

EvalReport EvalReport::from_json(const json& j) {
  if (!j.is_object() || !j.contains("schema_version")) throw FormatError("report has no schema_version");
  const int version = j.at("schema_version").get<int>();
  if (version != kReportSchemaVersion) {
    throw FormatError("report schema version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kReportSchemaVersion) + ")");
  }
  EvalReport r;
  try {
    r.clean_acc = opt_double(j, "clean_acc");
    if (j.contains("corruption") && !j.at("corruption").is_null()) r.corruption = table_from_json(j.at("corruption"));
    r.occlusion_acc = opt_double(j, "occlusion_acc");
    r.unbiased_acc = opt_double(j, "unbiased_acc");
    r.unbiased_clusters = j.value("unbiased_clusters", std::size_t{0});
    r.unbiased_defined_cells = j.value("unbiased_defined_cells", std::size_t{0});
    r.unbiased_degenerate = j.value("unbiased_degenerate", false);
    r.config_hash = j.value("config_hash", std::string());
    r.seeds = j.value("seeds", json::object());
    r.timestamp = j.value("timestamp", std::string());
    r.checkpoint = j.value("checkpoint", std::string());
    r.dataset = j.value("dataset", json::object());
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
  r.validate();
  return r;
}

void EvalReport::validate() const {
  auto check = [](const std::optional<double>& v, const std::string& what) {
    if (v && !(*v >= 0.0 && *v <= 1.0)) throw FormatError(what + " outside [0, 1]");
  };
  check(clean_acc, "clean_acc");
  check(occlusion_acc, "occlusion_acc");
  check(unbiased_acc, "unbiased_acc");
  if (corruption) {
    for (const auto& c : corruption->cells) check(c.accuracy, "corruption " + c.spec.name());
    check(corruption->overall, "corruption overall");
  }
}

json dataset_manifest(const data::DatasetHandle& dataset) {
  const auto& n = dataset.normalization();
  return {{"source", dataset.storage().source},
          {"split", data::to_string(dataset.split())},
          {"size", dataset.size()},
          {"seed", dataset.seed()},
          {"height", dataset.height()},
          {"width", dataset.width()},
          {"classes", dataset.class_names()},
          {"normalization", {{"mean", n.mean}, {"std", n.std}}}};
}

void write_report(const EvalReport& report, const fs::path& path) {
  report.validate();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("cannot write report " + path.string());
  os << report.to_json().dump(2) << '\n';
  if (!os) throw Error("failed writing report " + path.string());
}

EvalReport load_report(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open report " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw FormatError("report " + path.string() + ": " + e.what());
  }
  return EvalReport::from_json(j);
}

std::string corruption_csv(const CorruptionTable& table) {
  std::ostringstream os;
  os.precision(17);
  os << "kind,group";
  for (int s = 1; s <= corruptions::kMaxSeverity; ++s) os << ",severity_" << s;
  os << ",mean\n";
  for (auto kind : corruptions::kAllKinds) {
    std::vector<double> row;
    for (int s = 1; s <= corruptions::kMaxSeverity; ++s) {
      const auto v = table.accuracy({kind, s});
      row.push_back(v ? *v : std::nan(""));
    }
    bool any = false;
    for (double v : row) any |= !std::isnan(v);
    if (!any) continue;
    os << corruptions::to_string(kind) << ',' << corruptions::to_string(corruptions::group_of(kind));
    double sum = 0.0;
    std::size_t n = 0;
    for (double v : row) {
      os << ',';
      if (!std::isnan(v)) {
        os << v;
        sum += v;
        ++n;
      }
    }
    os << ',' << sum / static_cast<double>(n) << '\n';
  }
  for (const auto& [group, mean] : table.group_means) os << "group_mean," << group << ",,,,,," << mean << '\n';
  os << "overall,all,,,,,," << table.overall << '\n';
  return os.str();
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace styleaug::evaluation
