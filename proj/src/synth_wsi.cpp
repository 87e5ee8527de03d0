#include "wsidg/synth_wsi.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include "wsidg/error.hpp"
#include "wsidg/random.hpp"

namespace wsidg {

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw InvalidInput("unknown split '" + name + "'");
}

void DomainParams::validate() const {
  if (!(brightness_scale > 0.0) || !(contrast_scale > 0.0)) {
    throw InvalidInput("brightness_scale and contrast_scale must be positive");
  }
  if (!(noise_sigma >= 0.0)) throw InvalidInput("noise_sigma must be nonnegative");
  if (!(stain_hue_shift >= -180.0 && stain_hue_shift <= 180.0)) {
    throw InvalidInput("stain_hue_shift must lie in [-180, 180]");
  }
}

void SyntheticWsiSpec::validate() const {
  if (width_px < 256 || height_px < 256 || width_px % 256 != 0 || height_px % 256 != 0) {
    throw InvalidInput("WSI dimensions must be positive multiples of 256, got " +
                       std::to_string(width_px) + "x" + std::to_string(height_px));
  }
  if (!(tumor_fraction_target >= 0.0 && tumor_fraction_target <= 1.0)) {
    throw InvalidInput("tumor_fraction_target must lie in [0, 1]");
  }
  if (n_tumor_blobs < 0) throw InvalidInput("n_tumor_blobs must be nonnegative");
  if (tumor_fraction_target == 0.0 && n_tumor_blobs != 0) {
    throw InvalidInput("tumor_fraction_target = 0 requires n_tumor_blobs = 0");
  }
  domain.validate();
}

namespace {

struct Blob {
  double cx, cy;
  double rx, ry;  // semi-axes at unit scale
  double exponent;
};

bool inside(const Blob& b, double scale, double x, double y) {
  const double u = std::abs(x - b.cx) / (b.rx * scale);
  const double v = std::abs(y - b.cy) / (b.ry * scale);
  return std::pow(u, b.exponent) + std::pow(v, b.exponent) <= 1.0;
}

double coverage(const std::vector<Blob>& blobs, double scale, int w, int h, int step) {
  std::size_t hit = 0, total = 0;
  for (int y = step / 2; y < h; y += step) {
    for (int x = step / 2; x < w; x += step) {
      ++total;
      for (const auto& b : blobs) {
        if (inside(b, scale, x + 0.5, y + 0.5)) {
          ++hit;
          break;
        }
      }
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

Image tumor_mask(const SyntheticWsiSpec& spec, Rng& rng) {
  const int w = spec.width_px, h = spec.height_px;
  Image mask(w, h, 1, 0);
  if (spec.n_tumor_blobs == 0 || spec.tumor_fraction_target <= 0.0) return mask;

  std::uniform_real_distribution<double> ux(0.15 * w, 0.85 * w), uy(0.15 * h, 0.85 * h);
  std::uniform_real_distribution<double> aspect(0.7, 1.4), size(0.7, 1.3), expo(2.0, 4.0);
  std::vector<Blob> blobs;
  for (int i = 0; i < spec.n_tumor_blobs; ++i) {
    const double a = std::sqrt(aspect(rng));
    const double s = size(rng);
    blobs.push_back({ux(rng), uy(rng), s * a, s / a, expo(rng)});
  }

  // Coverage grows monotonically with the common scale; bisect on a coarse grid.
  const int step = std::max(4, std::max(w, h) / 256);
  double lo = 0.0, hi = 2.0 * std::max(w, h);
  for (int it = 0; it < 32; ++it) {
    const double mid = 0.5 * (lo + hi);
    (coverage(blobs, mid, w, h, step) < spec.tumor_fraction_target ? lo : hi) = mid;
  }
  const double scale = 0.5 * (lo + hi);
  for (const auto& b : blobs) {
    const int x0 = std::max(0, static_cast<int>(b.cx - b.rx * scale) - 1);
    const int x1 = std::min(w - 1, static_cast<int>(b.cx + b.rx * scale) + 1);
    const int y0 = std::max(0, static_cast<int>(b.cy - b.ry * scale) - 1);
    const int y1 = std::min(h - 1, static_cast<int>(b.cy + b.ry * scale) + 1);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (inside(b, scale, x + 0.5, y + 0.5)) mask.at(x, y) = 1;
      }
    }
  }
  return mask;
}

// Bilinear value noise on a coarse lattice, range [-1, 1].
Eigen::ArrayXXd value_noise(int w, int h, int cell, Rng& rng) {
  const int gw = w / cell + 2, gh = h / cell + 2;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::ArrayXXd lattice(gh, gw);
  for (Eigen::Index i = 0; i < lattice.size(); ++i) lattice(i) = u(rng);
  Eigen::ArrayXXd field(h, w);
  for (int y = 0; y < h; ++y) {
    const double fy = static_cast<double>(y) / cell;
    const int iy = static_cast<int>(fy);
    const double ty = fy - iy;
    for (int x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x) / cell;
      const int ix = static_cast<int>(fx);
      const double tx = fx - ix;
      const double top = lattice(iy, ix) * (1 - tx) + lattice(iy, ix + 1) * tx;
      const double bottom = lattice(iy + 1, ix) * (1 - tx) + lattice(iy + 1, ix + 1) * tx;
      field(y, x) = top * (1 - ty) + bottom * ty;
    }
  }
  return field;
}

struct TissueStyle {
  Eigen::Vector3d base;
  Eigen::Vector3d nucleus;
  double nuclei_per_px;
  double radius_min, radius_max;
};

// Non-tumor tissue is a patchwork of stroma, lymphoid and adipose regions. Lymphoid
// matches tumor in mean color through many small nuclei; tumor is set apart by
// large crowded nuclei.
enum Tissue { kStroma, kLymphoid, kAdipose, kTumorTissue, kTissueCount };

const TissueStyle kStyles[kTissueCount] = {
    {{236.0, 178.0, 204.0}, {150.0, 92.0, 170.0}, 1.0 / 1100.0, 2.0, 3.5},
    {{205.0, 150.0, 200.0}, {80.0, 50.0, 140.0}, 1.0 / 45.0, 1.5, 2.5},
    {{246.0, 224.0, 234.0}, {160.0, 110.0, 176.0}, 1.0 / 4000.0, 2.0, 3.0},
    {{226.0, 160.0, 200.0}, {82.0, 34.0, 118.0}, 1.0 / 260.0, 4.0, 7.5},
};

// Regions vary on the scale of a few patches so every slide mixes subtypes.
Tissue non_tumor_tissue(double region) {
  if (region < -0.3) return kAdipose;
  if (region > 0.25) return kLymphoid;
  return kStroma;
}

Eigen::Matrix3d hue_rotation(double degrees) {
  const double rad = degrees * M_PI / 180.0;
  return Eigen::AngleAxisd(rad, Eigen::Vector3d::Ones().normalized()).toRotationMatrix();
}

}  // namespace

WsiRecord generate_wsi(const SyntheticWsiSpec& spec, std::uint64_t seed, std::string wsi_id) {
  spec.validate();
  const int w = spec.width_px, h = spec.height_px;
  Rng rng(mix_seed(seed, 0));
  Rng texture_rng(mix_seed(seed ^ static_cast<std::uint64_t>(spec.domain.texture_seed), 1));
  Rng noise_rng(mix_seed(seed, 2));

  WsiRecord rec;
  rec.wsi_id = std::move(wsi_id);
  rec.domain = spec.domain;
  rec.mask = tumor_mask(spec, rng);

  const auto tumor_px = std::count(rec.mask.pixels.begin(), rec.mask.pixels.end(), 1);
  rec.tumor_fraction = static_cast<double>(tumor_px) / (static_cast<double>(w) * h);
  if (std::abs(rec.tumor_fraction - spec.tumor_fraction_target) > 0.05) {
    rec.warning = "tumor_fraction_target " + std::to_string(spec.tumor_fraction_target) +
                  " unreachable with " + std::to_string(spec.n_tumor_blobs) + " blob(s); achieved " +
                  std::to_string(rec.tumor_fraction);
  }

  // Composition in linear RGB floats, one plane per channel.
  const Eigen::ArrayXXd shade = value_noise(w, h, 64, texture_rng);
  const Eigen::ArrayXXd region = value_noise(w, h, 384, texture_rng);
  Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> tissue(h, w);
  std::array<Eigen::ArrayXXd, 3> rgb;
  for (int c = 0; c < 3; ++c) rgb[c].resize(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      tissue(y, x) = rec.mask.at(x, y) ? kTumorTissue : non_tumor_tissue(region(y, x));
      const auto& style = kStyles[tissue(y, x)];
      for (int c = 0; c < 3; ++c) rgb[c](y, x) = style.base[c] + 14.0 * shade(y, x);
    }
  }
  for (int t = 0; t < kTissueCount; ++t) {
    const auto& style = kStyles[t];
    const auto count = static_cast<long>(style.nuclei_per_px * w * h);
    std::uniform_real_distribution<double> px(0.0, w), py(0.0, h);
    std::uniform_real_distribution<double> radius(style.radius_min, style.radius_max);
    std::uniform_real_distribution<double> tone(-12.0, 12.0);
    for (long n = 0; n < count; ++n) {
      const double cx = px(texture_rng), cy = py(texture_rng), r = radius(texture_rng);
      const double dt = tone(texture_rng);
      const int x0 = std::max(0, static_cast<int>(cx - r)), x1 = std::min(w - 1, static_cast<int>(cx + r));
      const int y0 = std::max(0, static_cast<int>(cy - r)), y1 = std::min(h - 1, static_cast<int>(cy + r));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          if (tissue(y, x) != t) continue;
          const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
          if (dx * dx + dy * dy > r * r) continue;
          for (int c = 0; c < 3; ++c) rgb[c](y, x) = style.nucleus[c] + dt;
        }
      }
    }
  }

  // Slide-wide domain transform: hue -> brightness -> contrast -> noise.
  const Eigen::Matrix3d hue = hue_rotation(spec.domain.stain_hue_shift);
  const double brightness = spec.domain.brightness_scale;
  const double contrast = spec.domain.contrast_scale;
  std::normal_distribution<double> noise(0.0, 1.0);
  const double sigma = spec.domain.noise_sigma;
  rec.image = Image(w, h, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      Eigen::Vector3d p(rgb[0](y, x), rgb[1](y, x), rgb[2](y, x));
      p = hue * p;
      p *= brightness;
      p = (p.array() - 128.0) * contrast + 128.0;
      for (int c = 0; c < 3; ++c) {
        double v = p[c];
        if (sigma > 0.0) v += sigma * noise(noise_rng);
        rec.image.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return rec;
}

Cohort generate_cohort(int n_wsis, const CohortConfig& config, std::uint64_t seed) {
  const auto& profiles = config.profiles;
  const auto& counts = config.per_profile_counts;
  if (profiles.empty()) throw InvalidInput("generate_cohort: no domain profiles");
  if (counts.size() != profiles.size()) {
    throw InvalidInput("generate_cohort: " + std::to_string(counts.size()) + " counts for " +
                       std::to_string(profiles.size()) + " profiles");
  }
  if (std::any_of(counts.begin(), counts.end(), [](int c) { return c < 0; })) {
    throw InvalidInput("generate_cohort: negative profile count");
  }
  if (std::accumulate(counts.begin(), counts.end(), 0) != n_wsis) {
    throw InvalidInput("generate_cohort: per-profile counts do not sum to n_wsis");
  }
  const auto& f = config.split_fractions;
  if (f.train < 0 || f.val < 0 || f.test < 0 || f.train + f.val + f.test <= 0) {
    throw InvalidInput("generate_cohort: invalid split fractions");
  }

  Rng rng(mix_seed(seed, 100));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Cohort cohort;
  int index = 0;
  for (std::size_t p = 0; p < profiles.size(); ++p) {
    profiles[p].params.validate();
    // Stratified split per profile unless the profile is pinned to one split.
    std::vector<Split> splits(counts[p], profiles[p].split.value_or(Split::Train));
    if (!profiles[p].split) {
      const double total = f.train + f.val + f.test;
      const int n = counts[p];
      const int n_train = std::min(n, static_cast<int>(std::lround(n * f.train / total)));
      const int n_val = std::min(n - n_train, static_cast<int>(std::lround(n * f.val / total)));
      for (int i = 0; i < n; ++i) splits[i] = i < n_train ? Split::Train : i < n_train + n_val ? Split::Val : Split::Test;
      std::shuffle(splits.begin(), splits.end(), rng);
    }
    for (int i = 0; i < counts[p]; ++i, ++index) {
      DomainParams d = profiles[p].params;
      d.stain_hue_shift = std::clamp(d.stain_hue_shift + config.jitter.hue_deg * unit(rng), -180.0, 180.0);
      d.brightness_scale *= 1.0 + config.jitter.brightness_rel * unit(rng);
      d.contrast_scale *= 1.0 + config.jitter.contrast_rel * unit(rng);
      d.texture_seed = static_cast<std::int64_t>(mix_seed(seed, 1000 + index) >> 1);

      SyntheticWsiSpec spec{config.width_px, config.height_px, config.tumor_fraction_target,
                            config.n_tumor_blobs, d};
      char id[32];
      std::snprintf(id, sizeof id, "wsi_%03d", index);
      WsiRecord rec = generate_wsi(spec, mix_seed(seed, index), id);
      rec.split = splits[i];

      ManifestEntry entry;
      entry.wsi_id = rec.wsi_id;
      entry.profile_index = static_cast<int>(p);
      entry.split = rec.split;
      entry.domain_params = d;
      entry.tumor_fraction = rec.tumor_fraction;
      cohort.wsis.push_back(std::move(rec));
      cohort.manifest.push_back(std::move(entry));
    }
  }
  return cohort;
}

void to_json(nlohmann::json& j, const DomainParams& p) {
  j = {{"stain_hue_shift", p.stain_hue_shift},
       {"brightness_scale", p.brightness_scale},
       {"contrast_scale", p.contrast_scale},
       {"noise_sigma", p.noise_sigma},
       {"texture_seed", p.texture_seed}};
}

void from_json(const nlohmann::json& j, DomainParams& p) {
  p.stain_hue_shift = j.value("stain_hue_shift", 0.0);
  p.brightness_scale = j.value("brightness_scale", 1.0);
  p.contrast_scale = j.value("contrast_scale", 1.0);
  p.noise_sigma = j.value("noise_sigma", 0.0);
  p.texture_seed = j.value("texture_seed", std::int64_t{0});
}

void to_json(nlohmann::json& j, const ManifestEntry& e) {
  j = {{"wsi_id", e.wsi_id},
       {"image_path", e.image_path},
       {"mask_path", e.mask_path},
       {"profile_index", e.profile_index},
       {"split", to_string(e.split)},
       {"domain_params", e.domain_params},
       {"tumor_fraction", e.tumor_fraction}};
}

void from_json(const nlohmann::json& j, ManifestEntry& e) {
  j.at("wsi_id").get_to(e.wsi_id);
  j.at("image_path").get_to(e.image_path);
  j.at("mask_path").get_to(e.mask_path);
  j.at("profile_index").get_to(e.profile_index);
  e.split = split_from_string(j.at("split").get<std::string>());
  j.at("domain_params").get_to(e.domain_params);
  e.tumor_fraction = j.value("tumor_fraction", 0.0);
}

void write_cohort(Cohort& cohort, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  nlohmann::json doc;
  doc["wsis"] = nlohmann::json::array();
  for (std::size_t i = 0; i < cohort.wsis.size(); ++i) {
    auto& rec = cohort.wsis[i];
    auto& entry = cohort.manifest[i];
    entry.image_path = "images/" + rec.wsi_id + ".png";
    entry.mask_path = "masks/" + rec.wsi_id + "_mask.png";
    write_png(dir / entry.image_path, rec.image);
    Image mask_png = rec.mask;
    for (auto& v : mask_png.pixels) v = v ? 255 : 0;
    write_png(dir / entry.mask_path, mask_png);
    doc["wsis"].push_back(entry);
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << doc.dump(2) << "\n";
}

Cohort read_cohort(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cohort manifest not found: " + manifest_path.string());
  const auto doc = nlohmann::json::parse(in);
  Cohort cohort;
  for (const auto& j : doc.at("wsis")) {
    ManifestEntry entry = j.get<ManifestEntry>();
    WsiRecord rec;
    rec.wsi_id = entry.wsi_id;
    rec.image = read_png(dir / entry.image_path);
    rec.mask = read_png(dir / entry.mask_path);
    for (auto& v : rec.mask.pixels) v = v >= 128 ? 1 : 0;
    if (rec.image.width != rec.mask.width || rec.image.height != rec.mask.height) {
      throw IoError("image/mask size mismatch for " + entry.wsi_id);
    }
    rec.domain = entry.domain_params;
    rec.split = entry.split;
    rec.tumor_fraction = entry.tumor_fraction;
    cohort.wsis.push_back(std::move(rec));
    cohort.manifest.push_back(std::move(entry));
  }
  return cohort;
}

}  // namespace wsidg
