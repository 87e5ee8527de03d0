#include "wsidg/eval_metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "wsidg/error.hpp"
#include "wsidg/patch_pipeline.hpp"

namespace wsidg {

ConfusionCounts confusion(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw InvalidInput("confusion: length mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const int p = predicted[i], t = truth[i];
    if ((p != 0 && p != 1) || (t != 0 && t != 1)) throw InvalidInput("confusion: labels must be 0 or 1");
    if (p == 1 && t == 1) ++c.tp;
    else if (p == 1) ++c.fp;
    else if (t == 1) ++c.fn;
    else ++c.tn;
  }
  return c;
}

namespace {

double ratio(long num, long den, bool& undefined) {
  if (den == 0) {
    undefined = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

double f1_of(long tp, long fp, long fn, bool& undefined) {
  // Harmonic mean of precision and recall == 2tp / (2tp + fp + fn).
  return ratio(2 * tp, 2 * tp + fp + fn, undefined);
}

}  // namespace

MetricsReport metrics(const ConfusionCounts& c) {
  if (c.total() <= 0) throw InvalidInput("metrics: no evaluated samples");
  MetricsReport r;
  r.counts = c;
  r.precision = ratio(c.tp, c.tp + c.fp, r.precision_undefined);
  r.recall = ratio(c.tp, c.tp + c.fn, r.recall_undefined);
  r.f1 = f1_of(c.tp, c.fp, c.fn, r.f1_undefined);
  r.f1_tumor = r.f1;
  r.f1_non_tumor = f1_of(c.tn, c.fn, c.fp, r.non_tumor_undefined);
  r.macro_f1 = 0.5 * (r.f1_tumor + r.f1_non_tumor);
  return r;
}

nlohmann::json to_json(const MetricsReport& r) {
  return {{"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"macro_f1", r.macro_f1},
          {"f1_tumor", r.f1_tumor},
          {"f1_non_tumor", r.f1_non_tumor},
          {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}, {"tn", r.counts.tn}}},
          {"zero_division",
           {{"precision", r.precision_undefined},
            {"recall", r.recall_undefined},
            {"f1", r.f1_undefined},
            {"f1_non_tumor", r.non_tumor_undefined}}}};
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  const auto& c = j.at("counts");
  return metrics({c.at("tp").get<long>(), c.at("fp").get<long>(), c.at("fn").get<long>(), c.at("tn").get<long>()});
}

std::vector<int> predict_labels(const Encoder<double>& encoder, std::span<const nn::FeatureMap<double>> inputs) {
  const auto logits = encoder.classify(encoder.embed_prepared(inputs));
  std::vector<int> labels(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) labels[i] = logits(i, 1) > logits(i, 0) ? kTumor : kNonTumor;
  return labels;
}

TilePrediction predict_mask(const Encoder<double>& encoder, const WsiRecord& wsi, int stride) {
  const int size = encoder.config().patch_size;
  if (stride <= 0) stride = size;
  if (wsi.image.width < size || wsi.image.height < size) {
    throw InvalidInput("predict_mask: " + wsi.wsi_id + " is smaller than one patch");
  }
  TilePrediction out;
  out.rows = (wsi.image.height - size) / stride + 1;
  out.cols = (wsi.image.width - size) / stride + 1;
  out.mask = Image(wsi.image.width, wsi.image.height, 1, 0);
  std::vector<nn::FeatureMap<double>> inputs;
  for (int r = 0; r < out.rows; ++r) {
    for (int c = 0; c < out.cols; ++c) {
      const int x0 = c * stride, y0 = r * stride;
      inputs.push_back(encoder.prepare(crop(wsi.image, x0, y0, size, size)));
      long tumor = 0;
      for (int y = y0; y < y0 + size; ++y) {
        for (int x = x0; x < x0 + size; ++x) tumor += wsi.mask.at(x, y);
      }
      const long area = static_cast<long>(size) * size;
      out.uniform.push_back(tumor == 0 || tumor == area);
      out.truth.push_back(2 * tumor > area ? kTumor : kNonTumor);
    }
  }
  out.labels = predict_labels(encoder, inputs);
  // Block replication; with overlapping strides later tiles overwrite earlier ones.
  for (int r = 0; r < out.rows; ++r) {
    for (int c = 0; c < out.cols; ++c) {
      const auto v = static_cast<std::uint8_t>(out.labels[r * out.cols + c]);
      for (int y = r * stride; y < r * stride + size; ++y) {
        std::fill_n(&out.mask.pixels[static_cast<std::size_t>(y) * out.mask.width + c * stride], size, v);
      }
    }
  }
  return out;
}

SplitEvaluation evaluate_wsis(const Encoder<double>& encoder, std::span<const WsiRecord> wsis) {
  if (wsis.empty()) throw InvalidInput("evaluate: empty split");
  SplitEvaluation ev;
  std::vector<int> pred_uniform, truth_uniform, pred_all, truth_all;
  for (const auto& wsi : wsis) {
    auto tp = predict_mask(encoder, wsi);
    for (std::size_t i = 0; i < tp.labels.size(); ++i) {
      pred_all.push_back(tp.labels[i]);
      truth_all.push_back(tp.truth[i]);
      if (tp.uniform[i]) {
        pred_uniform.push_back(tp.labels[i]);
        truth_uniform.push_back(tp.truth[i]);
      }
    }
    ev.predictions.emplace(wsi.wsi_id, std::move(tp));
  }
  if (pred_uniform.empty()) throw InvalidInput("evaluate: no single-class tiles in split");
  ev.patches = metrics(confusion(pred_uniform, truth_uniform));
  ev.all_tiles = metrics(confusion(pred_all, truth_all));
  return ev;
}

std::string comparison_csv(const std::map<std::string, MetricsReport>& runs) {
  std::string out = "method,precision,recall,f1,macro_f1\n";
  char buf[160];
  for (const auto& mode : report_mode_order()) {
    const auto it = runs.find(mode);
    if (it == runs.end()) continue;
    const auto& r = it->second;
    std::snprintf(buf, sizeof buf, "%s,%.4f,%.4f,%.4f,%.4f\n", mode.c_str(), r.precision, r.recall, r.f1, r.macro_f1);
    out += buf;
  }
  for (const auto& [mode, r] : runs) {
    if (std::find(report_mode_order().begin(), report_mode_order().end(), mode) != report_mode_order().end()) continue;
    std::snprintf(buf, sizeof buf, "%s,%.4f,%.4f,%.4f,%.4f\n", mode.c_str(), r.precision, r.recall, r.f1, r.macro_f1);
    out += buf;
  }
  return out;
}

Image comparison_plot(const std::map<std::string, MetricsReport>& runs) {
  constexpr int kWidth = 640, kHeight = 360, kMargin = 30;
  Image img(kWidth, kHeight, 3, 255);
  const auto fill = [&](int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> rgb) {
    for (int y = std::max(0, y0); y < std::min(kHeight, y1); ++y) {
      for (int x = std::max(0, x0); x < std::min(kWidth, x1); ++x) {
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = rgb[c];
      }
    }
  };
  const std::array<std::array<std::uint8_t, 3>, 4> palette = {{{120, 120, 120}, {70, 130, 200}, {220, 90, 60}, {90, 170, 90}}};
  std::vector<const MetricsReport*> ordered;
  for (const auto& mode : report_mode_order()) {
    if (runs.count(mode)) ordered.push_back(&runs.at(mode));
  }
  for (const auto& [mode, r] : runs) {
    if (std::find(report_mode_order().begin(), report_mode_order().end(), mode) == report_mode_order().end()) {
      ordered.push_back(&r);
    }
  }
  const int plot_h = kHeight - 2 * kMargin;
  const int group_w = (kWidth - 2 * kMargin) / 4;
  const int bar_w = ordered.empty() ? 0 : std::max(4, (group_w - 20) / static_cast<int>(ordered.size()));
  // Gridlines at 0.25 steps.
  for (int g = 0; g <= 4; ++g) {
    const int y = kHeight - kMargin - g * plot_h / 4;
    fill(kMargin, y, kWidth - kMargin, y + 1, {220, 220, 220});
  }
  for (int m = 0; m < 4; ++m) {
    for (std::size_t r = 0; r < ordered.size(); ++r) {
      const auto& rep = *ordered[r];
      const double v = std::clamp(m == 0 ? rep.precision : m == 1 ? rep.recall : m == 2 ? rep.f1 : rep.macro_f1, 0.0, 1.0);
      const int x0 = kMargin + m * group_w + 10 + static_cast<int>(r) * bar_w;
      const int top = kHeight - kMargin - static_cast<int>(v * plot_h);
      fill(x0, top, x0 + bar_w - 2, kHeight - kMargin, palette[r % palette.size()]);
    }
  }
  fill(kMargin, kHeight - kMargin, kWidth - kMargin, kHeight - kMargin + 2, {0, 0, 0});
  fill(kMargin - 2, kMargin, kMargin, kHeight - kMargin, {0, 0, 0});
  return img;
}

void write_report(const std::map<std::string, MetricsReport>& runs, const std::filesystem::path& csv_path,
                  const std::filesystem::path& png_path) {
  std::ofstream out(csv_path);
  if (!out) throw IoError("cannot write " + csv_path.string());
  out << comparison_csv(runs);
  write_png(png_path, comparison_plot(runs));
}

}  // namespace wsidg
