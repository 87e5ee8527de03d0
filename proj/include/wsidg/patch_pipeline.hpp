#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wsidg/image.hpp"
#include "wsidg/synth_wsi.hpp"

namespace wsidg {

inline constexpr int kNonTumor = 0;
inline constexpr int kTumor = 1;

struct PatchRecord {
  std::string patch_id;
  std::string wsi_id;
  int row = 0;
  int col = 0;
  int label = kNonTumor;
  std::string image_path;
  Split split = Split::Train;

  friend bool operator==(const PatchRecord&, const PatchRecord&) = default;
};

// wsi_id -> class -> patch ids, in record order.
using PatchIndex = std::map<std::string, std::map<int, std::vector<std::string>>>;

struct PatchDataset {
  std::vector<PatchRecord> records;
  PatchIndex index;
  // Optional pixel payload, parallel to `records` when non-empty.
  std::vector<Image> images;

  PatchIndex rebuild_index() const;
  bool index_consistent() const { return rebuild_index() == index; }
  // Position of a patch id in `records`; throws InvalidInput when unknown.
  std::size_t position(const std::string& patch_id) const;
  std::vector<std::string> wsi_ids() const;

 private:
  mutable std::map<std::string, std::size_t> positions_;
};

struct TilePatch {
  PatchRecord record;
  Image image;
};

// Non-overlapping by default. Tiles whose mask window is not uniformly one
// class are discarded; output is row-major.
std::vector<TilePatch> tile_wsi(const WsiRecord& wsi, int patch_size = 256, int stride = 256);

struct DatasetSummary {
  // split -> class -> count
  std::map<std::string, std::map<int, std::size_t>> counts;
  std::vector<std::string> empty_wsis;
  std::size_t total = 0;
};

// Tiles every WSI accepted by `keep` (all when empty). WSIs without a single
// uniform tile still get an (empty) index entry.
PatchDataset build_dataset(const std::vector<WsiRecord>& wsis,
                           const std::function<bool(const WsiRecord&)>& keep = {},
                           int patch_size = 256, int stride = 256);

// Records (and images, if loaded) restricted to one split; index rebuilt.
PatchDataset filter_split(const PatchDataset& dataset, Split split);

DatasetSummary summarize(const PatchDataset& dataset);
nlohmann::json to_json(const DatasetSummary& summary);

// Writes patches/<patch_id>.png plus manifest.json and summary.json.
void write_patch_dataset(PatchDataset& dataset, const std::filesystem::path& dir);
// Reads manifest.json; `load_images` also decodes every patch PNG.
PatchDataset read_patch_dataset(const std::filesystem::path& dir, bool load_images = true);

void to_json(nlohmann::json& j, const PatchRecord& r);
void from_json(const nlohmann::json& j, PatchRecord& r);

}  // namespace wsidg
