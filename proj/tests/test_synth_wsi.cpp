#include <doctest.h>

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "wsidg/error.hpp"
#include "wsidg/synth_wsi.hpp"

using namespace wsidg;

namespace {

CohortConfig two_profiles(std::vector<int> counts) {
  CohortConfig c;
  c.width_px = c.height_px = 256;
  c.tumor_fraction_target = 0.25;
  c.n_tumor_blobs = 1;
  c.profiles = {{{0.0, 1.0, 1.0, 2.0, 0}, std::nullopt}, {{40.0, 0.8, 1.2, 2.0, 0}, std::nullopt}};
  c.per_profile_counts = std::move(counts);
  return c;
}

}  // namespace

TEST_CASE("zero tumor fraction gives an all-zero mask") {
  SyntheticWsiSpec spec;
  spec.width_px = spec.height_px = 512;
  spec.tumor_fraction_target = 0.0;
  spec.n_tumor_blobs = 0;
  const auto w = generate_wsi(spec, 3);
  CHECK(std::all_of(w.mask.pixels.begin(), w.mask.pixels.end(), [](auto v) { return v == 0; }));
  CHECK(w.tumor_fraction == 0.0);
  CHECK_FALSE(w.warning.has_value());
}

TEST_CASE("same spec and seed reproduce the record bit for bit") {
  SyntheticWsiSpec spec;
  spec.width_px = spec.height_px = 512;
  spec.domain = {25.0, 0.9, 1.1, 4.0, 11};
  const auto a = generate_wsi(spec, 42, "x");
  const auto b = generate_wsi(spec, 42, "x");
  CHECK(a.image == b.image);
  CHECK(a.mask == b.mask);
  CHECK_FALSE(generate_wsi(spec, 43, "x").image == a.image);
}

TEST_CASE("achieved tumor fraction matches a pixel recount") {
  SyntheticWsiSpec spec;
  spec.tumor_fraction_target = 0.25;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto w = generate_wsi(spec, seed);
    long ones = 0;
    for (int y = 0; y < w.mask.height; ++y)
      for (int x = 0; x < w.mask.width; ++x) ones += w.mask.at(x, y) == 1;
    const double fraction = static_cast<double>(ones) / (1024.0 * 1024.0);
    CHECK(std::abs(fraction - 0.25) <= 0.10);
    CHECK(fraction == doctest::Approx(w.tumor_fraction));
  }
}

TEST_CASE("mask is binary and matches image size") {
  SyntheticWsiSpec spec;
  spec.width_px = 768;
  spec.height_px = 512;
  const auto w = generate_wsi(spec, 9);
  CHECK(w.image.width == 768);
  CHECK(w.image.height == 512);
  CHECK(w.image.channels == 3);
  CHECK(w.mask.width == 768);
  CHECK(w.mask.height == 512);
  CHECK(std::all_of(w.mask.pixels.begin(), w.mask.pixels.end(), [](auto v) { return v <= 1; }));
}

TEST_CASE("a single blob can grow to cover the whole slide") {
  SyntheticWsiSpec spec;
  spec.width_px = spec.height_px = 256;
  spec.tumor_fraction_target = 1.0;
  spec.n_tumor_blobs = 1;
  const auto w = generate_wsi(spec, 1);
  CHECK(w.tumor_fraction >= 0.95);
  CHECK_FALSE(w.warning.has_value());
}

TEST_CASE("invalid specs are rejected") {
  SyntheticWsiSpec spec;
  spec.width_px = 300;
  CHECK_THROWS_AS(generate_wsi(spec, 1), InvalidInput);
  spec.width_px = 0;
  CHECK_THROWS_AS(generate_wsi(spec, 1), InvalidInput);
  spec = {};
  spec.tumor_fraction_target = 0.0;
  spec.n_tumor_blobs = 2;
  CHECK_THROWS_AS(generate_wsi(spec, 1), InvalidInput);
  spec = {};
  spec.domain.brightness_scale = 0.0;
  CHECK_THROWS_AS(generate_wsi(spec, 1), InvalidInput);
  spec = {};
  spec.domain.stain_hue_shift = 200.0;
  CHECK_THROWS_AS(generate_wsi(spec, 1), InvalidInput);
}

TEST_CASE("domain parameters shift appearance but never the mask") {
  SyntheticWsiSpec a;
  a.width_px = a.height_px = 256;
  SyntheticWsiSpec b = a;
  b.domain.stain_hue_shift = 45.0;
  b.domain.brightness_scale = 0.8;
  const auto wa = generate_wsi(a, 5), wb = generate_wsi(b, 5);
  CHECK(wa.mask == wb.mask);
  CHECK_FALSE(wa.image == wb.image);
}

TEST_CASE("cohort counts follow the profiles") {
  const auto c = generate_cohort(4, two_profiles({2, 2}), 1);
  REQUIRE(c.manifest.size() == 4);
  CHECK(std::count_if(c.manifest.begin(), c.manifest.end(), [](auto& e) { return e.profile_index == 0; }) == 2);
  CHECK(std::count_if(c.manifest.begin(), c.manifest.end(), [](auto& e) { return e.profile_index == 1; }) == 2);
  CHECK(c.manifest[0].wsi_id == "wsi_000");

  const auto d = generate_cohort(4, two_profiles({4, 0}), 1);
  CHECK(std::all_of(d.manifest.begin(), d.manifest.end(), [](auto& e) { return e.profile_index == 0; }));
}

TEST_CASE("cohort jitter stays within bounds and records domain params") {
  const auto c = generate_cohort(4, two_profiles({2, 2}), 7);
  for (std::size_t i = 0; i < c.wsis.size(); ++i) {
    const auto& e = c.manifest[i];
    CHECK(c.wsis[i].domain == e.domain_params);
    const double hue = e.profile_index ? 40.0 : 0.0;
    const double bright = e.profile_index ? 0.8 : 1.0;
    CHECK(std::abs(e.domain_params.stain_hue_shift - hue) <= 5.0 + 1e-12);
    CHECK(std::abs(e.domain_params.brightness_scale / bright - 1.0) <= 0.05 + 1e-12);
  }
}

TEST_CASE("cohort mismatches are rejected") {
  CHECK_THROWS_AS(generate_cohort(4, two_profiles({2, 1}), 1), InvalidInput);
  CHECK_THROWS_AS(generate_cohort(4, two_profiles({4}), 1), InvalidInput);
  auto c = two_profiles({2, 2});
  c.profiles.clear();
  c.per_profile_counts.clear();
  CHECK_THROWS_AS(generate_cohort(0, c, 1), InvalidInput);
}

TEST_CASE("a profile with a forced split keeps all its WSIs there") {
  auto cfg = two_profiles({3, 2});
  cfg.profiles[1].split = Split::Test;
  cfg.split_fractions = {0.7, 0.3, 0.0};
  const auto c = generate_cohort(5, cfg, 2);
  for (const auto& e : c.manifest) {
    if (e.profile_index == 1) CHECK(e.split == Split::Test);
    else CHECK(e.split != Split::Test);
  }
}

TEST_CASE("cohort round-trips through disk with 0/255 masks") {
  fixtures::TempDir tmp("cohort");
  auto c = generate_cohort(2, two_profiles({1, 1}), 4);
  write_cohort(c, tmp.path);
  std::ifstream in(tmp.path / "manifest.json");
  const auto j = nlohmann::json::parse(in);
  REQUIRE(j.at("wsis").size() == 2);
  for (const auto* key : {"wsi_id", "image_path", "mask_path", "profile_index", "split", "domain_params"}) {
    CHECK(j.at("wsis")[0].contains(key));
  }
  const auto mask_png = read_png(tmp.path / j.at("wsis")[0].at("mask_path").get<std::string>());
  CHECK(std::all_of(mask_png.pixels.begin(), mask_png.pixels.end(), [](auto v) { return v == 0 || v == 255; }));

  const auto back = read_cohort(tmp.path);
  REQUIRE(back.wsis.size() == 2);
  CHECK(back.wsis[0].image == c.wsis[0].image);
  CHECK(back.wsis[0].mask == c.wsis[0].mask);
  CHECK(back.manifest[1].domain_params == c.manifest[1].domain_params);
}
