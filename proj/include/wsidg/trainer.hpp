#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wsidg/bovw_grouping.hpp"
#include "wsidg/contrastive.hpp"
#include "wsidg/encoder.hpp"
#include "wsidg/eval_metrics.hpp"
#include "wsidg/patch_pipeline.hpp"
#include "wsidg/random.hpp"

namespace wsidg {

enum class TrainMode { Full, BaselineCe, BaselineCeSupcon };
enum class SamplerMode { CrossCluster, IntraCluster };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);
std::string to_string(SamplerMode mode);
SamplerMode sampler_mode_from_string(const std::string& name);

struct TrainConfig {
  TrainMode mode = TrainMode::Full;
  double learning_rate = 1e-5;
  int epochs = 20;
  int steps_per_epoch = 0;  // 0: ceil(#train WSIs / 2)
  std::uint64_t seed = 0;
  int patches_per_class = 32;
  int batch_size = 128;  // uniform batches of the baseline modes
  SamplerMode sampler = SamplerMode::CrossCluster;
  LossConfig loss;

  void validate() const;
  // Loss weights with the terms a mode does not use forced to zero.
  LossConfig effective_loss() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

// One optimization step's worth of patches from a WSI pair.
struct BatchSpec {
  std::string wsi_a, wsi_b;
  int cluster_a = -1, cluster_b = -1;
  // wsi -> class -> patch ids (multiset; repeats when oversampled)
  std::map<std::string, std::map<int, std::vector<std::string>>> patches;

  std::size_t size() const;
  // Flattened in (wsi_a, class 0, class 1, wsi_b, class 0, class 1) order.
  std::vector<std::string> patch_ids() const;
};

class PairSampler {
 public:
  PairSampler(const PatchDataset& dataset, const PseudoDomainAssignment& assignment, int patches_per_class = 32,
              SamplerMode mode = SamplerMode::CrossCluster);

  // Throws SamplingInfeasible when no admissible WSI pair exists.
  BatchSpec sample(Rng& rng) const;

  // cluster -> eligible WSIs (both classes present, sorted)
  const std::map<int, std::vector<std::string>>& eligible() const { return eligible_; }

 private:
  const PatchDataset& dataset_;
  const PseudoDomainAssignment& assignment_;
  int per_class_;
  SamplerMode mode_;
  std::map<int, std::vector<std::string>> eligible_;
  std::vector<std::pair<int, int>> cluster_pairs_;
  std::vector<int> intra_clusters_;
};

BatchSpec sample_batch(const PatchDataset& dataset, const PseudoDomainAssignment& assignment, Rng& rng,
                       int patches_per_class = 32, SamplerMode mode = SamplerMode::CrossCluster);

struct BatchObjective {
  TotalLoss<double> loss;
  int empty_positive_anchors = 0;
};

// Forward (and, with `grad`, backward) of the mode's objective over one batch.
// `grad` is overwritten with d(total)/d(parameters).
BatchObjective batch_objective(const Encoder<double>& encoder, std::span<const nn::FeatureMap<double>> inputs,
                               std::span<const int> labels, std::span<const std::string> wsi_ids,
                               const LossConfig& loss, TrainMode mode, Eigen::VectorXd* grad = nullptr);

struct StepLog {
  int step = 0;
  int epoch = 0;
  double l_w = 0, l_p = 0, l_c = 0, total = 0;
  int empty_pos = 0;
};

struct EpochMetrics {
  int epoch = 0;
  std::optional<MetricsReport> validation;
  double mean_total_loss = 0;
};

struct TrainResult {
  std::vector<StepLog> steps;
  std::vector<EpochMetrics> epochs;  // epoch 0 is the untrained model
  std::vector<Eigen::VectorXd> epoch_parameters;
  int best_epoch = 0;
  std::string rng_state;

  const Eigen::VectorXd& best_parameters() const { return epoch_parameters.at(best_epoch); }
  double validation_macro_f1(int epoch) const;
};

struct TrainOutputs {
  std::filesystem::path dir;  // empty: keep everything in memory
};

// SGD on the mode's objective. `assignment` is only read in full mode.
// `validation` selects the best epoch by macro-F1 (ties: earliest); without it
// the last epoch is kept.
TrainResult train(const TrainConfig& config, const PatchDataset& train_set, const PatchDataset* validation,
                  const PseudoDomainAssignment* assignment, Encoder<double>& encoder,
                  const TrainOutputs& outputs = {});

std::string step_log_csv(std::span<const StepLog> steps);

// Macro-F1 etc. over a dataset's records with the current parameters.
MetricsReport evaluate_dataset(const Encoder<double>& encoder, const PatchDataset& dataset);

struct SweepRow {
  int k = 0;
  bool feasible = false;
  std::string note;
  double val_macro_f1 = 0;
  int best_epoch = 0;
  Eigen::VectorXd parameters;
};

struct SweepResult {
  int best_k = 0;
  std::vector<SweepRow> rows;
};

// argmax of validation macro-F1 over feasible rows; ties go to the smaller K.
int select_best_k(std::span<const SweepRow> rows);

// Re-clusters the cached BoVW vectors for each K and retrains from the same
// initialization. Infeasible K (more clusters than WSIs) is skipped with a note.
SweepResult sweep_k(const TrainConfig& config, const PatchDataset& train_set, const PatchDataset& validation,
                    const GroupingResult& bovw, std::span<const int> ks, const Encoder<double>& initial,
                    std::uint64_t cluster_seed, const KMeansOptions& kmeans_options = {},
                    const std::filesystem::path& out_dir = {});

}  // namespace wsidg
