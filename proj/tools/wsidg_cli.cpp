#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "wsidg/error.hpp"
#include "wsidg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace wsidg;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::string> mode;
};

ExperimentConfig resolve(const Globals& g) {
  ExperimentConfig c = g.config_path.empty() ? default_experiment() : load_experiment(g.config_path);
  if (g.seed) c.seed = *g.seed;
  if (!g.out.empty()) c.output_dir = g.out;
  if (g.mode) c.train.mode = train_mode_from_string(*g.mode);
  return c;
}

void log_line(const std::string& s) { std::cout << s << std::endl; }

Cohort need_cohort(const Layout& l) {
  if (!fs::exists(l.cohort() / "manifest.json"))
    throw IoError("cohort not found: expected " + (l.cohort() / "manifest.json").string() + " (run generate)");
  return read_cohort(l.cohort());
}

PatchDataset need_patches(const Layout& l, bool load_images = true) {
  if (!fs::exists(l.patches() / "manifest.json"))
    throw IoError("patch manifest not found: expected " + (l.patches() / "manifest.json").string() + " (run tile)");
  return read_patch_dataset(l.patches(), load_images);
}

PseudoDomainAssignment need_assignment(const Layout& l) {
  const auto path = l.grouping() / "assignment.json";
  std::ifstream in(path);
  if (!in) throw IoError("grouping not found: expected " + path.string() + " (run group)");
  return assignment_from_json(nlohmann::json::parse(in));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pseudo-domain contrastive training for WSI patch segmentation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "global seed (overrides config)");
  app.add_option("--out", g.out, "output directory (overrides config)");
  app.add_option("--mode", g.mode, "training objective (overrides config)")
      ->check(CLI::IsMember({"full", "baseline_ce", "baseline_ce_supcon"}));

  auto* generate = app.add_subcommand("generate", "synthesize the cohort");
  auto* tile = app.add_subcommand("tile", "cut single-class patches");
  auto* group = app.add_subcommand("group", "fit codebook, BoVW vectors and pseudo-domain clusters");
  auto* train_cmd = app.add_subcommand("train", "train one mode");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  std::string checkpoint, split = "test";
  eval->add_option("--checkpoint", checkpoint, "checkpoint (default: best of --mode)");
  eval->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));
  auto* ablate = app.add_subcommand("ablate", "run all three modes and write the comparison");
  auto* sweep = app.add_subcommand("sweep-k", "retrain over the K grid and pick K on validation");

  // Global flags are accepted after the subcommand too.
  for (auto* sub : {generate, tile, group, train_cmd, eval, ablate, sweep}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    const ExperimentConfig config = resolve(g);
    const Layout layout{config.output_dir};
    const TrainMode mode = config.train.mode;
    fs::create_directories(layout.root);
    write_snapshot(config, layout.root);

    if (*generate) {
      run_generate(config, layout, log_line);
    } else if (*tile) {
      run_tile(config, need_cohort(layout), layout, log_line);
    } else if (*group) {
      const auto cohort_manifest = fs::exists(layout.cohort() / "manifest.json")
                                       ? std::optional(read_cohort(layout.cohort()).manifest)
                                       : std::nullopt;
      run_group(config, need_patches(layout), layout, log_line, cohort_manifest ? &*cohort_manifest : nullptr);
    } else if (*train_cmd) {
      const PatchDataset patches = need_patches(layout);
      std::optional<PseudoDomainAssignment> assignment;
      if (mode == TrainMode::Full) assignment = need_assignment(layout);
      run_train(config, mode, patches, assignment ? &*assignment : nullptr, layout, log_line);
    } else if (*eval) {
      const fs::path ckpt_path = checkpoint.empty() ? layout.train(mode) / "best.ckpt" : fs::path(checkpoint);
      if (!fs::exists(ckpt_path)) throw IoError("checkpoint not found: " + ckpt_path.string());
      const Encoder<double> enc = encoder_from_checkpoint(load_checkpoint(ckpt_path), config.encoder);
      const Split s = split_from_string(split);
      run_eval(config, enc, need_cohort(layout), s, layout.eval(mode, s), log_line);
    } else if (*ablate) {
      const auto r = run_ablation(config, layout, log_line);
      std::cout << comparison_csv(r.test);
    } else if (*sweep) {
      run_sweep(config, need_patches(layout), layout, log_line);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
