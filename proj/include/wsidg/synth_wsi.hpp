#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wsidg/image.hpp"

namespace wsidg {

enum class Split { Train, Val, Test };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

// Slide-wide appearance factors. Applied to the whole WSI, never per patch.
struct DomainParams {
  double stain_hue_shift = 0.0;   // degrees, [-180, 180]
  double brightness_scale = 1.0;  // > 0
  double contrast_scale = 1.0;    // > 0
  double noise_sigma = 0.0;       // pixel-intensity units
  std::int64_t texture_seed = 0;

  void validate() const;
  friend bool operator==(const DomainParams&, const DomainParams&) = default;
};

struct SyntheticWsiSpec {
  int width_px = 1024;
  int height_px = 1024;
  double tumor_fraction_target = 0.25;
  int n_tumor_blobs = 2;
  DomainParams domain;

  void validate() const;
};

struct WsiRecord {
  std::string wsi_id;
  Image image;  // H x W x 3
  Image mask;   // H x W x 1, values {0, 1}
  DomainParams domain;
  Split split = Split::Train;
  double tumor_fraction = 0.0;  // achieved
  std::optional<std::string> warning;
};

// Pure function of (spec, seed). Throws InvalidInput when the dimensions are
// not positive multiples of 256.
WsiRecord generate_wsi(const SyntheticWsiSpec& spec, std::uint64_t seed,
                       std::string wsi_id = "wsi");

struct DomainProfile {
  DomainParams params;
  // Forces every WSI of this profile into one split (e.g. a held-out test domain).
  std::optional<Split> split;
};

struct SplitFractions {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
};

struct JitterConfig {
  double hue_deg = 5.0;
  double brightness_rel = 0.05;
  double contrast_rel = 0.05;
};

struct CohortConfig {
  int width_px = 1024;
  int height_px = 1024;
  double tumor_fraction_target = 0.25;
  int n_tumor_blobs = 2;
  SplitFractions split_fractions;
  JitterConfig jitter;
  std::vector<DomainProfile> profiles;
  std::vector<int> per_profile_counts;
};

struct ManifestEntry {
  std::string wsi_id;
  std::string image_path;
  std::string mask_path;
  int profile_index = 0;
  Split split = Split::Train;
  DomainParams domain_params;
  double tumor_fraction = 0.0;
};

struct Cohort {
  std::vector<WsiRecord> wsis;
  std::vector<ManifestEntry> manifest;  // parallel to wsis
};

// Draws per_profile_counts[p] WSIs from profile p with jittered params and
// assigns splits. Throws InvalidInput on count/profile mismatches.
Cohort generate_cohort(int n_wsis, const CohortConfig& config, std::uint64_t seed);

// Writes images, masks (0/255) and manifest.json under `dir`; fills paths.
void write_cohort(Cohort& cohort, const std::filesystem::path& dir);
Cohort read_cohort(const std::filesystem::path& dir);

void to_json(nlohmann::json& j, const DomainParams& p);
void from_json(const nlohmann::json& j, DomainParams& p);
void to_json(nlohmann::json& j, const ManifestEntry& e);
void from_json(const nlohmann::json& j, ManifestEntry& e);

}  // namespace wsidg
