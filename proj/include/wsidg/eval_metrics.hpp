#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wsidg/encoder.hpp"
#include "wsidg/image.hpp"
#include "wsidg/synth_wsi.hpp"

namespace wsidg {

// Tumor (label 1) is the positive class.
struct ConfusionCounts {
  long tp = 0, fp = 0, fn = 0, tn = 0;

  long total() const { return tp + fp + fn + tn; }
  // Counts with the positive-class convention swapped.
  ConfusionCounts swapped() const { return {tn, fn, fp, tp}; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct MetricsReport {
  double precision = 0, recall = 0, f1 = 0, macro_f1 = 0;
  double f1_tumor = 0, f1_non_tumor = 0;
  ConfusionCounts counts;
  // Set when a denominator was zero and the metric was defined as 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
  bool non_tumor_undefined = false;
};

ConfusionCounts confusion(std::span<const int> predicted, std::span<const int> truth);
MetricsReport metrics(const ConfusionCounts& counts);

nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_from_json(const nlohmann::json& j);

struct TilePrediction {
  int rows = 0, cols = 0;
  std::vector<int> labels;      // row-major argmax per grid tile
  std::vector<int> truth;       // uniform mask label, or majority label for mixed tiles
  std::vector<bool> uniform;    // tile mask is single-class
  Image mask;                   // pixel mask (0/1), tiles replicated; uncovered border stays 0
};

// Argmax class per prepared patch; ties go to non-tumor.
std::vector<int> predict_labels(const Encoder<double>& encoder, std::span<const nn::FeatureMap<double>> inputs);

// Classifies every grid tile of `wsi`, mixed tiles included.
TilePrediction predict_mask(const Encoder<double>& encoder, const WsiRecord& wsi, int stride = 0);

struct SplitEvaluation {
  MetricsReport patches;    // single-class tiles only
  MetricsReport all_tiles;  // every tile against its majority label
  std::map<std::string, TilePrediction> predictions;
};

SplitEvaluation evaluate_wsis(const Encoder<double>& encoder, std::span<const WsiRecord> wsis);

inline const std::vector<std::string>& report_mode_order() {
  static const std::vector<std::string> order = {"baseline_ce", "baseline_ce_supcon", "full"};
  return order;
}

// Comparison table in fixed mode order; 4 decimals.
std::string comparison_csv(const std::map<std::string, MetricsReport>& runs);
// Grouped bar chart (one group per metric, one bar per mode).
Image comparison_plot(const std::map<std::string, MetricsReport>& runs);
void write_report(const std::map<std::string, MetricsReport>& runs, const std::filesystem::path& csv_path,
                  const std::filesystem::path& png_path);

}  // namespace wsidg
