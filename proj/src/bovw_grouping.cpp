#include "wsidg/bovw_grouping.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace wsidg {

int PseudoDomainAssignment::cluster(const std::string& wsi_id) const {
  const auto it = cluster_of.find(wsi_id);
  if (it == cluster_of.end()) throw InvalidInput("WSI '" + wsi_id + "' has no pseudo-domain");
  return it->second;
}

Codebook fit_codebook(const Eigen::MatrixXd& features, std::span<const int> labels, int k1,
                      std::uint64_t seed, const KMeansOptions& options) {
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
    throw InvalidInput("fit_codebook: labels and features differ in length");
  }
  if (std::any_of(labels.begin(), labels.end(), [](int l) { return l != kNonTumor; })) {
    throw InvalidInput("fit_codebook: only non-tumor patches may shape the codebook");
  }
  if (k1 < 1 || features.rows() < k1) {
    throw InvalidInput("fit_codebook: need at least K1 = " + std::to_string(k1) + " features, got " +
                       std::to_string(features.rows()));
  }
  auto res = kmeans(features, k1, seed, options);
  for (int a = 0; a < k1; ++a) {
    for (int b = a + 1; b < k1; ++b) {
      if (res.centroids.row(a) == res.centroids.row(b)) {
        throw InvalidInput("fit_codebook: fewer distinct features than K1");
      }
    }
  }
  return {std::move(res.centroids), seed};
}

BovwVector bovw_vector(const std::string& wsi_id, const Eigen::MatrixXd& features, const Codebook& codebook) {
  if (features.rows() == 0) throw UngroupableWsi(wsi_id);
  if (features.cols() != codebook.centroids.cols()) {
    throw InvalidInput("bovw_vector: feature width differs from codebook");
  }
  std::vector<long> counts(codebook.size(), 0);
  for (Eigen::Index i = 0; i < features.rows(); ++i) ++counts[nearest_centroid(features.row(i), codebook.centroids)];
  BovwVector v{wsi_id, Eigen::VectorXd(codebook.size())};
  for (int w = 0; w < codebook.size(); ++w) {
    v.histogram(w) = static_cast<double>(counts[w]) / static_cast<double>(features.rows());
  }
  return v;
}

PseudoDomainAssignment cluster_wsis(const std::vector<BovwVector>& vectors, int k, std::uint64_t seed,
                                    const KMeansOptions& options) {
  if (k < 1 || static_cast<int>(vectors.size()) < k) {
    throw InvalidInput("cluster_wsis: K = " + std::to_string(k) + " but only " +
                       std::to_string(vectors.size()) + " groupable WSIs");
  }
  Eigen::MatrixXd points(static_cast<Eigen::Index>(vectors.size()), vectors.front().histogram.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) points.row(i) = vectors[i].histogram.transpose();
  const auto res = kmeans(points, k, seed, options);
  PseudoDomainAssignment a;
  a.k = k;
  a.k1 = static_cast<int>(points.cols());
  a.cluster_seed = seed;
  a.objective = res.objective;
  for (std::size_t i = 0; i < vectors.size(); ++i) a.cluster_of[vectors[i].wsi_id] = res.assignments[i];
  return a;
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw InvalidInput("adjusted_rand_index: length mismatch");
  const auto comb2 = [](double n) { return n * (n - 1) / 2.0; };
  std::map<std::pair<int, int>, long> table;
  std::map<int, long> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++table[{a[i], b[i]}];
    ++rows[a[i]];
    ++cols[b[i]];
  }
  double index = 0, sum_rows = 0, sum_cols = 0;
  for (const auto& [_, n] : table) index += comb2(n);
  for (const auto& [_, n] : rows) sum_rows += comb2(n);
  for (const auto& [_, n] : cols) sum_cols += comb2(n);
  const double total = comb2(static_cast<double>(a.size()));
  if (total == 0) return 1.0;
  const double expected = sum_rows * sum_cols / total;
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index == expected) return 1.0;  // both partitions trivial and identical in structure
  return (index - expected) / (max_index - expected);
}

Eigen::MatrixXd style_feature_matrix(const PatchDataset& dataset, const Encoder<double>& frozen, StyleMode mode) {
  if (dataset.images.size() != dataset.records.size()) {
    throw InvalidInput("style features need patch pixels loaded");
  }
  Eigen::MatrixXd out;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const StyleFeature f = mode == StyleMode::RawColor ? raw_color_style(dataset.images[i])
                                                       : frozen.style_features(dataset.images[i]);
    if (i == 0) out.resize(static_cast<Eigen::Index>(dataset.records.size()), f.size());
    out.row(i) = f.transpose();
  }
  return out;
}

GroupingResult fit_bovw(const PatchDataset& dataset, const Encoder<double>& frozen, const GroupingConfig& config) {
  // Non-tumor records only, in record order, grouped per WSI.
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    if (dataset.records[i].label == kNonTumor) keep.push_back(i);
  }
  PatchDataset normal;
  for (auto i : keep) {
    normal.records.push_back(dataset.records[i]);
    normal.images.push_back(dataset.images.at(i));
  }
  const Eigen::MatrixXd features = style_feature_matrix(normal, frozen, config.style_mode);
  const std::vector<int> labels(normal.records.size(), kNonTumor);

  GroupingResult result;
  result.codebook = fit_codebook(features, labels, config.k1, config.codebook_seed, config.kmeans);

  std::map<std::string, std::vector<Eigen::Index>> rows_of;
  for (const auto& wsi : dataset.wsi_ids()) rows_of[wsi];
  for (std::size_t r = 0; r < normal.records.size(); ++r) rows_of[normal.records[r].wsi_id].push_back(r);
  for (const auto& [wsi, rows] : rows_of) {
    if (rows.empty()) {
      result.assignment.excluded.push_back(wsi);
      continue;
    }
    Eigen::MatrixXd f(static_cast<Eigen::Index>(rows.size()), features.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) f.row(i) = features.row(rows[i]);
    result.vectors.push_back(bovw_vector(wsi, f, result.codebook));
  }
  result.assignment.k1 = config.k1;
  result.assignment.codebook_seed = config.codebook_seed;
  return result;
}

GroupingResult group_wsis(const PatchDataset& dataset, const Encoder<double>& frozen, const GroupingConfig& config) {
  GroupingResult result = fit_bovw(dataset, frozen, config);
  auto excluded = std::move(result.assignment.excluded);
  result.assignment = cluster_wsis(result.vectors, config.k, config.cluster_seed, config.kmeans);
  result.assignment.excluded = std::move(excluded);
  result.assignment.codebook_seed = config.codebook_seed;
  return result;
}

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

void write_codebook_csv(const std::filesystem::path& path, const Codebook& codebook) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "word";
  for (Eigen::Index c = 0; c < codebook.centroids.cols(); ++c) out << ",f" << c;
  out << "\n";
  for (Eigen::Index w = 0; w < codebook.centroids.rows(); ++w) {
    out << w;
    for (Eigen::Index c = 0; c < codebook.centroids.cols(); ++c) out << "," << fmt_double(codebook.centroids(w, c));
    out << "\n";
  }
}

Codebook read_codebook_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  if (rows.size() < 2) throw IoError("empty codebook " + path.string());
  Codebook cb;
  cb.centroids.resize(static_cast<Eigen::Index>(rows.size() - 1), static_cast<Eigen::Index>(rows[0].size() - 1));
  for (std::size_t r = 1; r < rows.size(); ++r) {
    for (std::size_t c = 1; c < rows[r].size(); ++c) cb.centroids(r - 1, c - 1) = std::stod(rows[r][c]);
  }
  return cb;
}

void write_bovw_csv(const std::filesystem::path& path, const std::vector<BovwVector>& vectors) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "wsi_id";
  const auto k1 = vectors.empty() ? 0 : vectors.front().histogram.size();
  for (Eigen::Index w = 0; w < k1; ++w) out << ",w" << w;
  out << "\n";
  for (const auto& v : vectors) {
    out << v.wsi_id;
    for (Eigen::Index w = 0; w < v.histogram.size(); ++w) out << "," << fmt_double(v.histogram(w));
    out << "\n";
  }
}

std::vector<BovwVector> read_bovw_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  std::vector<BovwVector> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    BovwVector v{rows[r][0], Eigen::VectorXd(static_cast<Eigen::Index>(rows[r].size() - 1))};
    for (std::size_t c = 1; c < rows[r].size(); ++c) v.histogram(c - 1) = std::stod(rows[r][c]);
    out.push_back(std::move(v));
  }
  return out;
}

nlohmann::json to_json(const PseudoDomainAssignment& a) {
  return {{"assignment", a.cluster_of},
          {"K", a.k},
          {"K1", a.k1},
          {"seeds", {{"codebook", a.codebook_seed}, {"cluster", a.cluster_seed}}},
          {"excluded", a.excluded},
          {"objective", a.objective}};
}

PseudoDomainAssignment assignment_from_json(const nlohmann::json& j) {
  PseudoDomainAssignment a;
  a.cluster_of = j.at("assignment").get<std::map<std::string, int>>();
  a.k = j.at("K").get<int>();
  a.k1 = j.at("K1").get<int>();
  a.codebook_seed = j.at("seeds").at("codebook").get<std::uint64_t>();
  a.cluster_seed = j.at("seeds").at("cluster").get<std::uint64_t>();
  a.excluded = j.value("excluded", std::vector<std::string>{});
  a.objective = j.value("objective", 0.0);
  return a;
}

}  // namespace wsidg
