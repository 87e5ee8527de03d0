#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wsidg/encoder.hpp"
#include "wsidg/kmeans.hpp"
#include "wsidg/patch_pipeline.hpp"

namespace wsidg {

struct Codebook {
  Eigen::MatrixXd centroids;  // K1 x S
  std::uint64_t seed = 0;

  int size() const { return static_cast<int>(centroids.rows()); }
};

struct BovwVector {
  std::string wsi_id;
  Eigen::VectorXd histogram;  // K1 entries summing to 1
};

struct PseudoDomainAssignment {
  std::map<std::string, int> cluster_of;
  int k = 0;
  int k1 = 0;
  std::uint64_t codebook_seed = 0;
  std::uint64_t cluster_seed = 0;
  std::vector<std::string> excluded;  // WSIs without non-tumor patches
  double objective = 0.0;

  int cluster(const std::string& wsi_id) const;
  bool contains(const std::string& wsi_id) const { return cluster_of.count(wsi_id) != 0; }
};

// Visual-word codebook over non-tumor style features (rows of `features`).
// Every label must be 0; throws InvalidInput otherwise.
Codebook fit_codebook(const Eigen::MatrixXd& features, std::span<const int> labels, int k1,
                      std::uint64_t seed, const KMeansOptions& options = {});

// Normalized word counts. Throws UngroupableWsi when `features` is empty.
BovwVector bovw_vector(const std::string& wsi_id, const Eigen::MatrixXd& features, const Codebook& codebook);

PseudoDomainAssignment cluster_wsis(const std::vector<BovwVector>& vectors, int k, std::uint64_t seed,
                                    const KMeansOptions& options = {});

// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

// Style features for every record of `dataset` (rows in record order).
Eigen::MatrixXd style_feature_matrix(const PatchDataset& dataset, const Encoder<double>& frozen, StyleMode mode);

struct GroupingConfig {
  StyleMode style_mode = StyleMode::Activations;
  int k1 = 16;
  int k = 2;
  std::uint64_t codebook_seed = 0;
  std::uint64_t cluster_seed = 0;
  KMeansOptions kmeans;
};

struct GroupingResult {
  Codebook codebook;
  std::vector<BovwVector> vectors;
  PseudoDomainAssignment assignment;
};

// Style features -> codebook -> BoVW vectors of WSIs with non-tumor patches -> K-means.
// Only label-0 records are read.
GroupingResult group_wsis(const PatchDataset& dataset, const Encoder<double>& frozen, const GroupingConfig& config);

// Codebook + BoVW vectors fitted once, reusable across K.
GroupingResult fit_bovw(const PatchDataset& dataset, const Encoder<double>& frozen, const GroupingConfig& config);

void write_codebook_csv(const std::filesystem::path& path, const Codebook& codebook);
Codebook read_codebook_csv(const std::filesystem::path& path);
void write_bovw_csv(const std::filesystem::path& path, const std::vector<BovwVector>& vectors);
std::vector<BovwVector> read_bovw_csv(const std::filesystem::path& path);
nlohmann::json to_json(const PseudoDomainAssignment& a);
PseudoDomainAssignment assignment_from_json(const nlohmann::json& j);

}  // namespace wsidg
