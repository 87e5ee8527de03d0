#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wsidg/bovw_grouping.hpp"
#include "wsidg/encoder.hpp"
#include "wsidg/eval_metrics.hpp"
#include "wsidg/patch_pipeline.hpp"
#include "wsidg/synth_wsi.hpp"
#include "wsidg/trainer.hpp"

namespace wsidg {

struct GroupingSettings {
  StyleMode style_mode = StyleMode::Activations;
  int k1 = 16;
  int k = 2;
  std::vector<int> k_sweep = {2, 4, 6, 8, 10};
  KMeansOptions kmeans;
};

// Everything one experiment needs; the single source of truth for every subcommand.
struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::string output_dir = "runs/default";
  CohortConfig cohort;
  int patch_size = 256;
  int stride = 256;
  EncoderConfig encoder;
  GroupingSettings grouping;
  TrainConfig train;

  int n_wsis() const;
  // Component seeds derived from `seed`.
  std::uint64_t cohort_seed() const { return mix_seed(seed, 1); }
  std::uint64_t encoder_seed() const { return mix_seed(seed, 2); }
  std::uint64_t codebook_seed() const { return mix_seed(seed, 3); }
  std::uint64_t cluster_seed() const { return mix_seed(seed, 4); }
  std::uint64_t train_seed() const { return mix_seed(seed, 5); }

  GroupingConfig grouping_config() const;
  TrainConfig train_config(TrainMode mode) const;
};

// Desk-scale default: two source profiles split train/val, one held-out test profile.
ExperimentConfig default_experiment();

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_experiment(const std::filesystem::path& path);
void write_snapshot(const ExperimentConfig& config, const std::filesystem::path& dir);

// 64-bit FNV-1a over a file's bytes, hex encoded.
std::string file_hash(const std::filesystem::path& path);

using Logger = std::function<void(const std::string&)>;

struct Layout {
  std::filesystem::path root;
  std::filesystem::path cohort() const { return root / "cohort"; }
  std::filesystem::path patches() const { return root / "patches"; }
  std::filesystem::path grouping() const { return root / "grouping"; }
  std::filesystem::path train(TrainMode m) const { return root / "train" / to_string(m); }
  std::filesystem::path eval(TrainMode m, Split s) const { return root / "eval" / (to_string(m) + "_" + to_string(s)); }
  std::filesystem::path ablation() const { return root / "ablation"; }
  std::filesystem::path sweep() const { return root / "sweep"; }
};

Cohort run_generate(const ExperimentConfig& config, const Layout& layout, const Logger& log);
PatchDataset run_tile(const ExperimentConfig& config, const Cohort& cohort, const Layout& layout, const Logger& log);
GroupingResult run_group(const ExperimentConfig& config, const PatchDataset& patches, const Layout& layout,
                         const Logger& log, const std::vector<ManifestEntry>* manifest = nullptr);
TrainResult run_train(const ExperimentConfig& config, TrainMode mode, const PatchDataset& patches,
                      const PseudoDomainAssignment* assignment, const Layout& layout, const Logger& log);
SplitEvaluation run_eval(const ExperimentConfig& config, const Encoder<double>& encoder, const Cohort& cohort,
                         Split split, const std::filesystem::path& dir, const Logger& log, bool write_masks = true);

struct AblationResult {
  std::map<std::string, MetricsReport> test;        // mode -> held-out metrics (single-class tiles)
  std::map<std::string, MetricsReport> validation;  // mode -> best-epoch validation metrics
  std::string manifest_hash;
};

// generate -> tile -> group -> train x {baseline_ce, baseline_ce_supcon, full} -> eval on test.
AblationResult run_ablation(const ExperimentConfig& config, const Layout& layout, const Logger& log);

SweepResult run_sweep(const ExperimentConfig& config, const PatchDataset& patches, const Layout& layout,
                      const Logger& log);

}  // namespace wsidg
