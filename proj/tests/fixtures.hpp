#pragma once

#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "wsidg/encoder.hpp"
#include "wsidg/patch_pipeline.hpp"
#include "wsidg/random.hpp"

namespace fixtures {

// Encoder small enough for finite differences: 16x16 patches pooled to 8x8.
inline wsidg::EncoderConfig tiny_encoder_config() {
  wsidg::EncoderConfig c;
  c.patch_size = 16;
  c.stem_pool = 2;
  c.base_width = 2;
  c.hidden_dim = 6;
  c.embed_dim = 5;
  return c;
}

// Flat-colored noisy patch; tumor patches are darker, `tint` shifts the hue.
inline wsidg::Image patch(int side, int label, double tint, wsidg::Rng& rng) {
  std::normal_distribution<double> noise(0.0, 12.0);
  wsidg::Image im(side, side, 3);
  const double base[3] = {label ? 120.0 : 220.0, label ? 70.0 : 170.0, label ? 140.0 : 200.0};
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = base[c] + (c == 0 ? tint : -tint) + noise(rng);
        im.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return im;
}

// counts[w] = {non-tumor, tumor} patches of WSI w; WSI w gets tint tints[w].
inline wsidg::PatchDataset dataset(const std::vector<std::pair<int, int>>& counts, const std::vector<double>& tints,
                                   int side, std::uint64_t seed,
                                   const std::vector<wsidg::Split>& splits = {}) {
  wsidg::Rng rng(seed);
  wsidg::PatchDataset ds;
  for (std::size_t w = 0; w < counts.size(); ++w) {
    char id[16];
    std::snprintf(id, sizeof id, "wsi_%03zu", w);
    int k = 0;
    for (int label = 0; label < 2; ++label) {
      const int n = label ? counts[w].second : counts[w].first;
      for (int i = 0; i < n; ++i, ++k) {
        wsidg::PatchRecord r;
        r.wsi_id = id;
        r.row = k / 8;
        r.col = k % 8;
        char pid[40];
        std::snprintf(pid, sizeof pid, "%s_r%03d_c%03d", id, r.row, r.col);
        r.patch_id = pid;
        r.label = label;
        r.split = splits.empty() ? wsidg::Split::Train : splits[w];
        ds.records.push_back(r);
        ds.images.push_back(patch(side, label, tints[w], rng));
      }
    }
  }
  ds.index = ds.rebuild_index();
  return ds;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() / ("wsidg_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace fixtures
