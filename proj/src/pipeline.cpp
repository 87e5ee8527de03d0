#include "wsidg/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>

namespace wsidg {

int ExperimentConfig::n_wsis() const {
  return std::accumulate(cohort.per_profile_counts.begin(), cohort.per_profile_counts.end(), 0);
}

GroupingConfig ExperimentConfig::grouping_config() const {
  GroupingConfig g;
  g.style_mode = grouping.style_mode;
  g.k1 = grouping.k1;
  g.k = grouping.k;
  g.codebook_seed = codebook_seed();
  g.cluster_seed = cluster_seed();
  g.kmeans = grouping.kmeans;
  return g;
}

TrainConfig ExperimentConfig::train_config(TrainMode mode) const {
  TrainConfig t = train;
  t.mode = mode;
  t.seed = train_seed();
  return t;
}

ExperimentConfig default_experiment() {
  ExperimentConfig c;
  c.cohort.width_px = 2048;
  c.cohort.height_px = 2048;
  c.cohort.tumor_fraction_target = 0.3;
  c.cohort.n_tumor_blobs = 2;
  c.cohort.split_fractions = {0.75, 0.25, 0.0};
  c.cohort.profiles = {
      {{0.0, 1.0, 1.0, 3.0, 0}, std::nullopt},
      {{30.0, 0.85, 1.25, 3.0, 0}, std::nullopt},
      {{-35.0, 1.1, 0.8, 5.0, 0}, Split::Test},
  };
  c.cohort.per_profile_counts = {8, 8, 4};
  c.grouping.k = 2;
  c.train.learning_rate = 3e-3;
  c.train.epochs = 80;
  return c;
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json profiles = nlohmann::json::array();
  for (std::size_t i = 0; i < c.cohort.profiles.size(); ++i) {
    const auto& p = c.cohort.profiles[i];
    profiles.push_back({{"count", i < c.cohort.per_profile_counts.size() ? c.cohort.per_profile_counts[i] : 0},
                        {"split", p.split ? nlohmann::json(to_string(*p.split)) : nlohmann::json(nullptr)},
                        {"domain", p.params}});
  }
  const auto& f = c.cohort.split_fractions;
  const auto& jt = c.cohort.jitter;
  j = {{"seed", c.seed},
       {"output_dir", c.output_dir},
       {"cohort",
        {{"width_px", c.cohort.width_px},
         {"height_px", c.cohort.height_px},
         {"tumor_fraction_target", c.cohort.tumor_fraction_target},
         {"n_tumor_blobs", c.cohort.n_tumor_blobs},
         {"split_fractions", {{"train", f.train}, {"val", f.val}, {"test", f.test}}},
         {"jitter", {{"hue_deg", jt.hue_deg}, {"brightness_rel", jt.brightness_rel}, {"contrast_rel", jt.contrast_rel}}},
         {"profiles", profiles}}},
       {"patch", {{"patch_size", c.patch_size}, {"stride", c.stride}}},
       {"encoder", c.encoder},
       {"grouping",
        {{"style_mode", to_string(c.grouping.style_mode)},
         {"K1", c.grouping.k1},
         {"K", c.grouping.k},
         {"k_sweep", c.grouping.k_sweep},
         {"kmeans_restarts", c.grouping.kmeans.restarts},
         {"kmeans_max_iterations", c.grouping.kmeans.max_iterations}}},
       {"train", c.train}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = default_experiment();
  c.seed = j.value("seed", c.seed);
  c.output_dir = j.value("output_dir", c.output_dir);
  if (j.contains("cohort")) {
    const auto& h = j.at("cohort");
    c.cohort.width_px = h.value("width_px", c.cohort.width_px);
    c.cohort.height_px = h.value("height_px", c.cohort.height_px);
    c.cohort.tumor_fraction_target = h.value("tumor_fraction_target", c.cohort.tumor_fraction_target);
    c.cohort.n_tumor_blobs = h.value("n_tumor_blobs", c.cohort.n_tumor_blobs);
    if (h.contains("split_fractions")) {
      const auto& f = h.at("split_fractions");
      c.cohort.split_fractions = {f.value("train", 0.0), f.value("val", 0.0), f.value("test", 0.0)};
    }
    if (h.contains("jitter")) {
      const auto& jt = h.at("jitter");
      c.cohort.jitter = {jt.value("hue_deg", 5.0), jt.value("brightness_rel", 0.05), jt.value("contrast_rel", 0.05)};
    }
    if (h.contains("profiles")) {
      c.cohort.profiles.clear();
      c.cohort.per_profile_counts.clear();
      for (const auto& p : h.at("profiles")) {
        DomainProfile prof;
        prof.params = p.value("domain", DomainParams{});
        if (p.contains("split") && !p.at("split").is_null()) prof.split = split_from_string(p.at("split").get<std::string>());
        c.cohort.profiles.push_back(prof);
        c.cohort.per_profile_counts.push_back(p.value("count", 0));
      }
    }
  }
  if (j.contains("patch")) {
    c.patch_size = j.at("patch").value("patch_size", c.patch_size);
    c.stride = j.at("patch").value("stride", c.stride);
  }
  if (j.contains("encoder")) c.encoder = j.at("encoder").get<EncoderConfig>();
  if (j.contains("grouping")) {
    const auto& g = j.at("grouping");
    c.grouping.style_mode = style_mode_from_string(g.value("style_mode", to_string(c.grouping.style_mode)));
    c.grouping.k1 = g.value("K1", c.grouping.k1);
    c.grouping.k = g.value("K", c.grouping.k);
    c.grouping.k_sweep = g.value("k_sweep", c.grouping.k_sweep);
    c.grouping.kmeans.restarts = g.value("kmeans_restarts", c.grouping.kmeans.restarts);
    c.grouping.kmeans.max_iterations = g.value("kmeans_max_iterations", c.grouping.kmeans.max_iterations);
  }
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  c.encoder.patch_size = c.patch_size;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config not found: " + path.string());
  return nlohmann::json::parse(in).get<ExperimentConfig>();
}

void write_snapshot(const ExperimentConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "config.resolved.json") << nlohmann::json(config).dump(2) << "\n";
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot hash " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

Cohort run_generate(const ExperimentConfig& config, const Layout& layout, const Logger& log) {
  namespace fs = std::filesystem;
  if (!fs::exists(layout.root)) log("created output directory " + layout.root.string());
  fs::create_directories(layout.cohort());
  Cohort cohort = generate_cohort(config.n_wsis(), config.cohort, config.cohort_seed());
  for (const auto& w : cohort.wsis) {
    if (w.warning) log("warning: " + w.wsi_id + ": " + *w.warning);
  }
  write_cohort(cohort, layout.cohort());
  write_snapshot(config, layout.cohort());
  log("generated " + std::to_string(cohort.wsis.size()) + " WSIs in " + layout.cohort().string());
  return cohort;
}

PatchDataset run_tile(const ExperimentConfig& config, const Cohort& cohort, const Layout& layout, const Logger& log) {
  PatchDataset ds = build_dataset(cohort.wsis, {}, config.patch_size, config.stride);
  write_patch_dataset(ds, layout.patches());
  write_snapshot(config, layout.patches());
  const auto s = summarize(ds);
  for (const auto& [split, classes] : s.counts) {
    log("patches " + split + ": tumor=" + std::to_string(classes.at(kTumor)) +
        " non_tumor=" + std::to_string(classes.at(kNonTumor)));
  }
  for (const auto& w : s.empty_wsis) log("note: " + w + " has no single-class tiles");
  return ds;
}

GroupingResult run_group(const ExperimentConfig& config, const PatchDataset& patches, const Layout& layout,
                         const Logger& log, const std::vector<ManifestEntry>* manifest) {
  namespace fs = std::filesystem;
  const PatchDataset train_set = filter_split(patches, Split::Train);
  const Encoder<double> frozen = make_encoder(config.encoder, config.encoder_seed());
  GroupingResult g = group_wsis(train_set, frozen, config.grouping_config());
  fs::create_directories(layout.grouping());
  write_codebook_csv(layout.grouping() / "codebook.csv", g.codebook);
  write_bovw_csv(layout.grouping() / "bovw.csv", g.vectors);
  std::ofstream(layout.grouping() / "assignment.json") << to_json(g.assignment).dump(2) << "\n";
  write_snapshot(config, layout.grouping());
  for (const auto& w : g.assignment.excluded) log("excluded from grouping (no non-tumor patches): " + w);
  if (manifest) {
    std::vector<int> truth, found;
    for (const auto& e : *manifest) {
      if (!g.assignment.contains(e.wsi_id)) continue;
      truth.push_back(e.profile_index);
      found.push_back(g.assignment.cluster(e.wsi_id));
    }
    if (!truth.empty()) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "adjusted Rand vs hidden profiles: %.4f", adjusted_rand_index(found, truth));
      log(buf);
    }
  }
  log("grouped " + std::to_string(g.vectors.size()) + " WSIs into K=" + std::to_string(g.assignment.k) +
      " pseudo-domains (K1=" + std::to_string(g.codebook.size()) + ")");
  return g;
}

TrainResult run_train(const ExperimentConfig& config, TrainMode mode, const PatchDataset& patches,
                      const PseudoDomainAssignment* assignment, const Layout& layout, const Logger& log) {
  const PatchDataset train_set = filter_split(patches, Split::Train);
  const PatchDataset val_set = filter_split(patches, Split::Val);
  Encoder<double> encoder = make_encoder(config.encoder, config.encoder_seed());
  const TrainConfig tc = config.train_config(mode);
  const auto dir = layout.train(mode);
  auto result = train(tc, train_set, val_set.records.empty() ? nullptr : &val_set,
                      mode == TrainMode::Full ? assignment : nullptr, encoder, {dir});
  write_snapshot(config, dir);
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s: %zu steps, best epoch %d (val macro-F1 %.4f, untrained %.4f)",
                to_string(mode).c_str(), result.steps.size(), result.best_epoch,
                result.validation_macro_f1(result.best_epoch), result.validation_macro_f1(0));
  log(buf);
  return result;
}

SplitEvaluation run_eval(const ExperimentConfig& config, const Encoder<double>& encoder, const Cohort& cohort,
                         Split split, const std::filesystem::path& dir, const Logger& log, bool write_masks) {
  namespace fs = std::filesystem;
  std::vector<WsiRecord> wsis;
  for (const auto& w : cohort.wsis) {
    if (w.split == split) wsis.push_back(w);
  }
  if (wsis.empty()) throw InvalidInput("eval: split '" + to_string(split) + "' has no WSIs");
  auto ev = evaluate_wsis(encoder, wsis);
  fs::create_directories(dir);
  nlohmann::json report = {{"split", to_string(split)},
                           {"patches", to_json(ev.patches)},
                           {"all_tiles", to_json(ev.all_tiles)},
                           {"n_wsis", wsis.size()}};
  std::ofstream(dir / "report.json") << report.dump(2) << "\n";
  if (write_masks) {
    fs::create_directories(dir / "masks");
    for (const auto& [id, tp] : ev.predictions) {
      Image png = tp.mask;
      for (auto& v : png.pixels) v = v ? 255 : 0;
      write_png(dir / "masks" / (id + "_pred.png"), png);
    }
  }
  write_snapshot(config, dir);
  char buf[160];
  std::snprintf(buf, sizeof buf, "eval %s: precision %.4f recall %.4f F1 %.4f macro-F1 %.4f", to_string(split).c_str(),
                ev.patches.precision, ev.patches.recall, ev.patches.f1, ev.patches.macro_f1);
  log(buf);
  return ev;
}

AblationResult run_ablation(const ExperimentConfig& config, const Layout& layout, const Logger& log) {
  const Cohort cohort = run_generate(config, layout, log);
  const PatchDataset patches = run_tile(config, cohort, layout, log);
  const GroupingResult grouping = run_group(config, patches, layout, log, &cohort.manifest);

  AblationResult result;
  result.manifest_hash = file_hash(layout.patches() / "manifest.json");
  for (const auto& name : report_mode_order()) {
    const TrainMode mode = train_mode_from_string(name);
    // Each run re-reads the manifest it trains on; all three must agree.
    const auto hash = file_hash(layout.patches() / "manifest.json");
    log(name + " consumes patch manifest " + hash + (hash == result.manifest_hash ? " (match)" : " (MISMATCH)"));
    if (hash != result.manifest_hash) throw IoError("patch manifest changed during ablation");
    const auto tr = run_train(config, mode, patches, &grouping.assignment, layout, log);
    Encoder<double> enc(config.encoder, 0);
    enc.parameters() = tr.best_parameters();
    const auto ev = run_eval(config, enc, cohort, Split::Test, layout.eval(mode, Split::Test), log, false);
    result.test[name] = ev.patches;
    if (tr.epochs.at(tr.best_epoch).validation) result.validation[name] = *tr.epochs.at(tr.best_epoch).validation;
  }
  std::filesystem::create_directories(layout.ablation());
  write_report(result.test, layout.ablation() / "comparison.csv", layout.ablation() / "comparison.png");
  std::ofstream(layout.ablation() / "manifest_hash.txt") << result.manifest_hash << "\n";
  write_snapshot(config, layout.ablation());
  return result;
}

SweepResult run_sweep(const ExperimentConfig& config, const PatchDataset& patches, const Layout& layout,
                      const Logger& log) {
  namespace fs = std::filesystem;
  const PatchDataset train_set = filter_split(patches, Split::Train);
  const PatchDataset val_set = filter_split(patches, Split::Val);
  if (val_set.records.empty()) throw InvalidInput("sweep-k: validation split is empty");
  const Encoder<double> initial = make_encoder(config.encoder, config.encoder_seed());
  const GroupingResult bovw = fit_bovw(train_set, initial, config.grouping_config());
  auto result = sweep_k(config.train_config(TrainMode::Full), train_set, val_set, bovw, config.grouping.k_sweep, initial,
                        config.cluster_seed(), config.grouping.kmeans, layout.sweep());
  fs::create_directories(layout.sweep());
  std::ofstream out(layout.sweep() / "sweep.csv");
  out << "K,feasible,val_macro_f1,best_epoch,note\n";
  for (const auto& r : result.rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", r.val_macro_f1);
    out << r.k << "," << (r.feasible ? 1 : 0) << "," << buf << "," << r.best_epoch << ",\"" << r.note << "\"\n";
    log("K=" + std::to_string(r.k) + ": " + (r.feasible ? std::string("val macro-F1 ") + buf : r.note));
  }
  std::ofstream(layout.sweep() / "best_k.txt") << result.best_k << "\n";
  write_snapshot(config, layout.sweep());
  log("best K = " + std::to_string(result.best_k));
  return result;
}

}  // namespace wsidg
