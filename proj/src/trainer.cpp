#include "wsidg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace wsidg {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Full: return "full";
    case TrainMode::BaselineCe: return "baseline_ce";
    case TrainMode::BaselineCeSupcon: return "baseline_ce_supcon";
  }
  return "full";
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "full") return TrainMode::Full;
  if (name == "baseline_ce") return TrainMode::BaselineCe;
  if (name == "baseline_ce_supcon") return TrainMode::BaselineCeSupcon;
  throw InvalidInput("unknown mode '" + name + "' (expected full, baseline_ce or baseline_ce_supcon)");
}

std::string to_string(SamplerMode mode) {
  return mode == SamplerMode::CrossCluster ? "cross_cluster" : "intra_cluster";
}

SamplerMode sampler_mode_from_string(const std::string& name) {
  if (name == "cross_cluster") return SamplerMode::CrossCluster;
  if (name == "intra_cluster") return SamplerMode::IntraCluster;
  throw InvalidInput("unknown sampler '" + name + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidInput("learning_rate must be positive");
  if (epochs < 1) throw InvalidInput("epochs must be positive");
  if (steps_per_epoch < 0) throw InvalidInput("steps_per_epoch must be nonnegative");
  if (patches_per_class < 1 || batch_size < 1) throw InvalidInput("batch sizes must be positive");
  loss.validate();
}

LossConfig TrainConfig::effective_loss() const {
  LossConfig l = loss;
  if (mode != TrainMode::Full) l.weight_wsi = 0.0;
  if (mode == TrainMode::BaselineCe) l.weight_patch = 0.0;
  return l;
}

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"temperature_patch", c.temperature_patch}, {"temperature_wsi", c.temperature_wsi},
       {"weight_wsi", c.weight_wsi},               {"weight_patch", c.weight_patch},
       {"weight_ce", c.weight_ce},                 {"same_wsi_positives", c.same_wsi_positives}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  const LossConfig d;
  c.temperature_patch = j.value("temperature_patch", d.temperature_patch);
  c.temperature_wsi = j.value("temperature_wsi", d.temperature_wsi);
  c.weight_wsi = j.value("weight_wsi", d.weight_wsi);
  c.weight_patch = j.value("weight_patch", d.weight_patch);
  c.weight_ce = j.value("weight_ce", d.weight_ce);
  c.same_wsi_positives = j.value("same_wsi_positives", d.same_wsi_positives);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"mode", to_string(c.mode)},
       {"learning_rate", c.learning_rate},
       {"epochs", c.epochs},
       {"steps_per_epoch", c.steps_per_epoch},
       {"seed", c.seed},
       {"patches_per_class", c.patches_per_class},
       {"batch_size", c.batch_size},
       {"sampler", to_string(c.sampler)},
       {"optimizer", "sgd"},
       {"loss", c.loss}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.mode = train_mode_from_string(j.value("mode", to_string(d.mode)));
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.epochs = j.value("epochs", d.epochs);
  c.steps_per_epoch = j.value("steps_per_epoch", d.steps_per_epoch);
  c.seed = j.value("seed", d.seed);
  c.patches_per_class = j.value("patches_per_class", d.patches_per_class);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.sampler = sampler_mode_from_string(j.value("sampler", to_string(d.sampler)));
  if (j.value("optimizer", std::string("sgd")) != "sgd") throw InvalidInput("only the sgd optimizer is supported");
  c.loss = j.value("loss", d.loss);
}

std::size_t BatchSpec::size() const {
  std::size_t n = 0;
  for (const auto& [_, classes] : patches) {
    for (const auto& [__, ids] : classes) n += ids.size();
  }
  return n;
}

std::vector<std::string> BatchSpec::patch_ids() const {
  std::vector<std::string> ids;
  for (const auto* wsi : {&wsi_a, &wsi_b}) {
    const auto it = patches.find(*wsi);
    if (it == patches.end()) continue;
    for (const auto& [_, list] : it->second) ids.insert(ids.end(), list.begin(), list.end());
  }
  return ids;
}

PairSampler::PairSampler(const PatchDataset& dataset, const PseudoDomainAssignment& assignment, int patches_per_class,
                         SamplerMode mode)
    : dataset_(dataset), assignment_(assignment), per_class_(patches_per_class), mode_(mode) {
  if (per_class_ < 1) throw InvalidInput("patches_per_class must be positive");
  for (const auto& [wsi, classes] : dataset.index) {
    if (!assignment.contains(wsi)) continue;
    const auto n0 = classes.count(kNonTumor) ? classes.at(kNonTumor).size() : 0;
    const auto n1 = classes.count(kTumor) ? classes.at(kTumor).size() : 0;
    if (n0 > 0 && n1 > 0) eligible_[assignment.cluster(wsi)].push_back(wsi);
  }
  std::vector<int> clusters;
  for (const auto& [c, wsis] : eligible_) {
    clusters.push_back(c);
    if (wsis.size() >= 2) intra_clusters_.push_back(c);
  }
  for (std::size_t a = 0; a < clusters.size(); ++a) {
    for (std::size_t b = a + 1; b < clusters.size(); ++b) cluster_pairs_.emplace_back(clusters[a], clusters[b]);
  }
  const bool feasible = mode_ == SamplerMode::CrossCluster ? !cluster_pairs_.empty() : !intra_clusters_.empty();
  if (!feasible) {
    std::string populations;
    std::map<int, int> all;
    for (const auto& [wsi, c] : assignment.cluster_of) ++all[c];
    for (const auto& [c, n] : all) {
      const auto e = eligible_.count(c) ? eligible_.at(c).size() : 0;
      populations += " cluster " + std::to_string(c) + ": " + std::to_string(n) + " WSIs (" + std::to_string(e) +
                     " eligible);";
    }
    throw SamplingInfeasible(std::string("no eligible ") +
                             (mode_ == SamplerMode::CrossCluster ? "cross-cluster" : "intra-cluster") +
                             " WSI pair;" + populations);
  }
}

BatchSpec PairSampler::sample(Rng& rng) const {
  BatchSpec spec;
  if (mode_ == SamplerMode::CrossCluster) {
    std::uniform_int_distribution<std::size_t> pick_pair(0, cluster_pairs_.size() - 1);
    const auto [ca, cb] = cluster_pairs_[pick_pair(rng)];
    const auto& wa = eligible_.at(ca);
    const auto& wb = eligible_.at(cb);
    std::uniform_int_distribution<std::size_t> pa(0, wa.size() - 1), pb(0, wb.size() - 1);
    spec.wsi_a = wa[pa(rng)];
    spec.wsi_b = wb[pb(rng)];
    spec.cluster_a = ca;
    spec.cluster_b = cb;
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, intra_clusters_.size() - 1);
    const int c = intra_clusters_[pick(rng)];
    std::vector<std::string> two;
    std::sample(eligible_.at(c).begin(), eligible_.at(c).end(), std::back_inserter(two), 2, rng);
    spec.wsi_a = two[0];
    spec.wsi_b = two[1];
    spec.cluster_a = spec.cluster_b = c;
  }
  for (const auto* wsi : {&spec.wsi_a, &spec.wsi_b}) {
    for (int cls : {kNonTumor, kTumor}) {
      const auto& pool = dataset_.index.at(*wsi).at(cls);
      auto& out = spec.patches[*wsi][cls];
      if (static_cast<int>(pool.size()) >= per_class_) {
        // Without replacement: partial Fisher-Yates over positions.
        std::vector<std::size_t> pos(pool.size());
        std::iota(pos.begin(), pos.end(), 0);
        for (int i = 0; i < per_class_; ++i) {
          std::uniform_int_distribution<std::size_t> u(i, pos.size() - 1);
          std::swap(pos[i], pos[u(rng)]);
          out.push_back(pool[pos[i]]);
        }
      } else {
        std::uniform_int_distribution<std::size_t> u(0, pool.size() - 1);
        for (int i = 0; i < per_class_; ++i) out.push_back(pool[u(rng)]);
      }
    }
  }
  return spec;
}

BatchSpec sample_batch(const PatchDataset& dataset, const PseudoDomainAssignment& assignment, Rng& rng,
                       int patches_per_class, SamplerMode mode) {
  return PairSampler(dataset, assignment, patches_per_class, mode).sample(rng);
}

BatchObjective batch_objective(const Encoder<double>& encoder, std::span<const nn::FeatureMap<double>> inputs,
                               std::span<const int> labels, std::span<const std::string> wsi_ids,
                               const LossConfig& loss, TrainMode mode, Eigen::VectorXd* grad) {
  using Matrix = Eigen::MatrixXd;
  const auto n = static_cast<Eigen::Index>(inputs.size());
  if (n == 0 || static_cast<Eigen::Index>(labels.size()) != n || static_cast<Eigen::Index>(wsi_ids.size()) != n) {
    throw InvalidInput("batch_objective: inconsistent batch");
  }
  TrainConfig mode_cfg;
  mode_cfg.mode = mode;
  mode_cfg.loss = loss;
  const LossConfig weights = mode_cfg.effective_loss();

  std::vector<Encoder<double>::Trace> traces(grad ? inputs.size() : 0);
  Matrix z(n, encoder.config().embed_dim);
  for (Eigen::Index i = 0; i < n; ++i) z.row(i) = encoder.forward(inputs[i], grad ? &traces[i] : nullptr).transpose();

  BatchObjective out;
  if (!z.allFinite()) {
    // Diverged parameters; let the caller persist the batch.
    out.loss.total = std::numeric_limits<double>::quiet_NaN();
    if (grad) grad->setConstant(encoder.parameter_count(), out.loss.total);
    return out;
  }
  const Matrix logits = encoder.classify(z);
  Matrix grad_logits;
  const double l_c = cross_entropy<double>(logits, labels, grad ? &grad_logits : nullptr);

  double l_p = 0, l_w = 0;
  Matrix grad_unit = Matrix::Zero(n, z.cols());
  Matrix unit;
  if (weights.weight_patch != 0.0 || weights.weight_wsi != 0.0) unit = normalize_rows<double>(z);
  if (weights.weight_patch != 0.0) {
    Matrix g;
    const auto lp = patch_level_loss<double>(unit, label_pairs(labels), loss, grad ? &g : nullptr);
    l_p = lp.value;
    out.empty_positive_anchors += lp.empty_positive_anchors;
    if (grad) grad_unit += weights.weight_patch * g;
  }
  if (weights.weight_wsi != 0.0) {
    const auto protos = class_prototypes<double>(unit, labels, wsi_ids);
    Matrix g;
    const auto lw = wsi_level_loss<double>(protos, loss, grad ? &g : nullptr);
    l_w = lw.value;
    out.empty_positive_anchors += lw.empty_positive_anchors;
    if (grad) grad_unit += weights.weight_wsi * prototype_backward<double>(protos, g, n);
  }
  out.loss.l_w = l_w;
  out.loss.l_p = l_p;
  out.loss.l_c = l_c;
  out.loss.total = weights.weight_wsi * l_w + weights.weight_patch * l_p + weights.weight_ce * l_c;

  if (grad) {
    grad->setZero(encoder.parameter_count());
    Matrix grad_z = encoder.classify_backward(z, weights.weight_ce * grad_logits, *grad);
    if (unit.size() != 0) grad_z += normalize_rows_backward<double>(z, unit, grad_unit);
    for (Eigen::Index i = 0; i < n; ++i) encoder.backward(traces[i], grad_z.row(i).transpose(), *grad);
  }
  return out;
}

double TrainResult::validation_macro_f1(int epoch) const {
  const auto& e = epochs.at(epoch);
  return e.validation ? e.validation->macro_f1 : 0.0;
}

MetricsReport evaluate_dataset(const Encoder<double>& encoder, const PatchDataset& dataset) {
  if (dataset.images.size() != dataset.records.size() || dataset.records.empty()) {
    throw InvalidInput("evaluate_dataset: dataset empty or pixels not loaded");
  }
  std::vector<nn::FeatureMap<double>> inputs;
  std::vector<int> truth;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    inputs.push_back(encoder.prepare(dataset.images[i]));
    truth.push_back(dataset.records[i].label);
  }
  return metrics(confusion(predict_labels(encoder, inputs), truth));
}

std::string step_log_csv(std::span<const StepLog> steps) {
  std::string out = "step,epoch,L_w,L_p,L_c,total,empty_pos\n";
  char buf[256];
  for (const auto& s : steps) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.10g,%.10g,%.10g,%.10g,%d\n", s.step, s.epoch, s.l_w, s.l_p, s.l_c,
                  s.total, s.empty_pos);
    out += buf;
  }
  return out;
}

namespace {

void write_replay(const std::filesystem::path& path, int step, std::span<const std::size_t> batch,
                  const PatchDataset& data, const StepLog& log) {
  nlohmann::json j;
  j["step"] = step;
  j["losses"] = {{"L_w", log.l_w}, {"L_p", log.l_p}, {"L_c", log.l_c}, {"total", log.total}};
  for (auto i : batch) {
    j["patches"].push_back({{"patch_id", data.records[i].patch_id},
                            {"wsi_id", data.records[i].wsi_id},
                            {"label", data.records[i].label}});
  }
  std::ofstream(path) << j.dump(2) << "\n";
}

}  // namespace

TrainResult train(const TrainConfig& config, const PatchDataset& train_set, const PatchDataset* validation,
                  const PseudoDomainAssignment* assignment, Encoder<double>& encoder, const TrainOutputs& outputs) {
  namespace fs = std::filesystem;
  config.validate();
  if (train_set.records.empty() || train_set.images.size() != train_set.records.size()) {
    throw InvalidInput("train: training set empty or pixels not loaded");
  }
  if (config.mode == TrainMode::Full && (!assignment || assignment->cluster_of.empty())) {
    throw InvalidInput("train: full mode requires a pseudo-domain assignment");
  }
  const LossConfig loss = config.loss;

  std::vector<nn::FeatureMap<double>> inputs;
  inputs.reserve(train_set.images.size());
  for (const auto& img : train_set.images) inputs.push_back(encoder.prepare(img));

  const auto n_wsis = static_cast<int>(train_set.wsi_ids().size());
  const int steps_per_epoch = config.steps_per_epoch > 0 ? config.steps_per_epoch : std::max(1, (n_wsis + 1) / 2);

  std::optional<PairSampler> sampler;
  if (config.mode == TrainMode::Full) {
    sampler.emplace(train_set, *assignment, config.patches_per_class, config.sampler);
  }

  if (!outputs.dir.empty()) fs::create_directories(outputs.dir / "checkpoints");
  Rng rng(mix_seed(config.seed, 11));
  TrainResult result;

  const auto finish_epoch = [&](int epoch, double mean_loss) {
    EpochMetrics em;
    em.epoch = epoch;
    em.mean_total_loss = mean_loss;
    if (validation && !validation->records.empty()) em.validation = evaluate_dataset(encoder, *validation);
    result.epochs.push_back(em);
    result.epoch_parameters.push_back(encoder.parameters());
    if (!outputs.dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch);
      Checkpoint ck{encoder.config(), encoder.parameters(), serialize_rng(rng),
                    {{"epoch", epoch}, {"mode", to_string(config.mode)}}};
      save_checkpoint(outputs.dir / "checkpoints" / name, ck);
    }
  };
  finish_epoch(0, 0.0);

  std::vector<std::size_t> all(train_set.records.size());
  std::iota(all.begin(), all.end(), 0);
  Eigen::VectorXd grad(encoder.parameter_count());
  int step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0;
    for (int s = 0; s < steps_per_epoch; ++s, ++step) {
      std::vector<std::size_t> batch;
      if (sampler) {
        for (const auto& id : sampler->sample(rng).patch_ids()) batch.push_back(train_set.position(id));
      } else if (all.size() >= static_cast<std::size_t>(config.batch_size)) {
        for (int i = 0; i < config.batch_size; ++i) {
          std::uniform_int_distribution<std::size_t> u(i, all.size() - 1);
          std::swap(all[i], all[u(rng)]);
          batch.push_back(all[i]);
        }
      } else {
        std::uniform_int_distribution<std::size_t> u(0, all.size() - 1);
        for (int i = 0; i < config.batch_size; ++i) batch.push_back(u(rng));
      }

      std::vector<nn::FeatureMap<double>> batch_inputs;
      std::vector<int> labels;
      std::vector<std::string> wsis;
      for (auto i : batch) {
        batch_inputs.push_back(inputs[i]);
        labels.push_back(train_set.records[i].label);
        wsis.push_back(train_set.records[i].wsi_id);
      }
      const auto obj = batch_objective(encoder, batch_inputs, labels, wsis, loss, config.mode, &grad);
      StepLog log{step, epoch, obj.loss.l_w, obj.loss.l_p, obj.loss.l_c, obj.loss.total, obj.empty_positive_anchors};
      if (!std::isfinite(obj.loss.total) || !grad.allFinite()) {
        const fs::path dir = outputs.dir.empty() ? fs::temp_directory_path() : outputs.dir;
        const fs::path replay = dir / ("replay_step_" + std::to_string(step) + ".json");
        write_replay(replay, step, batch, train_set, log);
        throw NonFiniteLoss("non-finite loss at step " + std::to_string(step) + "; batch saved to " + replay.string(),
                            replay.string());
      }
      encoder.parameters() -= config.learning_rate * grad;
      result.steps.push_back(log);
      loss_sum += obj.loss.total;
    }
    finish_epoch(epoch, loss_sum / steps_per_epoch);
  }

  result.best_epoch = config.epochs;
  if (validation && !validation->records.empty()) {
    result.best_epoch = 0;
    for (int e = 1; e <= config.epochs; ++e) {
      if (result.validation_macro_f1(e) > result.validation_macro_f1(result.best_epoch)) result.best_epoch = e;
    }
  }
  result.rng_state = serialize_rng(rng);

  if (!outputs.dir.empty()) {
    std::ofstream(outputs.dir / "log.csv") << step_log_csv(result.steps);
    std::ofstream ep(outputs.dir / "epochs.csv");
    ep << "epoch,mean_total_loss,val_precision,val_recall,val_f1,val_macro_f1\n";
    for (const auto& e : result.epochs) {
      char buf[200];
      const auto v = e.validation.value_or(MetricsReport{});
      std::snprintf(buf, sizeof buf, "%d,%.10g,%.6f,%.6f,%.6f,%.6f\n", e.epoch, e.mean_total_loss, v.precision,
                    v.recall, v.f1, v.macro_f1);
      ep << buf;
    }
    Checkpoint best{encoder.config(), result.best_parameters(), result.rng_state,
                    {{"epoch", result.best_epoch}, {"mode", to_string(config.mode)}, {"best", true}}};
    save_checkpoint(outputs.dir / "best.ckpt", best);
  }
  return result;
}

int select_best_k(std::span<const SweepRow> rows) {
  const SweepRow* best = nullptr;
  for (const auto& r : rows) {
    if (!r.feasible) continue;
    if (!best || r.val_macro_f1 > best->val_macro_f1 || (r.val_macro_f1 == best->val_macro_f1 && r.k < best->k)) {
      best = &r;
    }
  }
  if (!best) throw InvalidInput("sweep: every K is infeasible");
  return best->k;
}

SweepResult sweep_k(const TrainConfig& config, const PatchDataset& train_set, const PatchDataset& validation,
                    const GroupingResult& bovw, std::span<const int> ks, const Encoder<double>& initial,
                    std::uint64_t cluster_seed, const KMeansOptions& kmeans_options,
                    const std::filesystem::path& out_dir) {
  SweepResult result;
  TrainConfig cfg = config;
  cfg.mode = TrainMode::Full;
  for (int k : ks) {
    SweepRow row;
    row.k = k;
    if (k < 1 || k > static_cast<int>(bovw.vectors.size())) {
      row.note = "skipped: K=" + std::to_string(k) + " exceeds " + std::to_string(bovw.vectors.size()) +
                 " groupable WSIs";
      result.rows.push_back(std::move(row));
      continue;
    }
    auto assignment = cluster_wsis(bovw.vectors, k, cluster_seed, kmeans_options);
    assignment.k1 = bovw.codebook.size();
    assignment.codebook_seed = bovw.codebook.seed;
    Encoder<double> enc = initial;
    TrainOutputs outs;
    if (!out_dir.empty()) outs.dir = out_dir / ("k_" + std::to_string(k));
    try {
      const auto tr = train(cfg, train_set, &validation, &assignment, enc, outs);
      row.feasible = true;
      row.best_epoch = tr.best_epoch;
      row.val_macro_f1 = tr.validation_macro_f1(tr.best_epoch);
      row.parameters = tr.best_parameters();
      row.note = "ok";
    } catch (const SamplingInfeasible& e) {
      row.note = std::string("skipped: ") + e.what();
    }
    result.rows.push_back(std::move(row));
  }
  result.best_k = select_best_k(result.rows);
  return result;
}

}  // namespace wsidg
