#include "wsidg/patch_pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "wsidg/error.hpp"

namespace wsidg {

PatchIndex PatchDataset::rebuild_index() const {
  PatchIndex idx;
  for (const auto& wsi : wsi_ids()) idx[wsi];
  for (const auto& r : records) idx[r.wsi_id][r.label].push_back(r.patch_id);
  return idx;
}

std::vector<std::string> PatchDataset::wsi_ids() const {
  std::vector<std::string> ids;
  for (const auto& [wsi, _] : index) ids.push_back(wsi);
  for (const auto& r : records) {
    if (std::find(ids.begin(), ids.end(), r.wsi_id) == ids.end()) ids.push_back(r.wsi_id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::size_t PatchDataset::position(const std::string& patch_id) const {
  if (positions_.size() != records.size()) {
    positions_.clear();
    for (std::size_t i = 0; i < records.size(); ++i) positions_[records[i].patch_id] = i;
  }
  const auto it = positions_.find(patch_id);
  if (it == positions_.end()) throw InvalidInput("unknown patch id '" + patch_id + "'");
  return it->second;
}

std::vector<TilePatch> tile_wsi(const WsiRecord& wsi, int patch_size, int stride) {
  const int h = wsi.image.height, w = wsi.image.width;
  if (wsi.mask.width != w || wsi.mask.height != h) {
    throw InvalidInput("tile_wsi: mask and image dimensions differ for " + wsi.wsi_id);
  }
  if (patch_size <= 0 || patch_size > std::min(h, w)) {
    throw InvalidInput("tile_wsi: patch_size " + std::to_string(patch_size) +
                       " exceeds image dimensions of " + wsi.wsi_id);
  }
  if (stride < 1) throw InvalidInput("tile_wsi: stride must be >= 1");

  std::vector<TilePatch> out;
  int row = 0;
  for (int y = 0; y + patch_size <= h; y += stride, ++row) {
    int col = 0;
    for (int x = 0; x + patch_size <= w; x += stride, ++col) {
      const std::uint8_t first = wsi.mask.at(x, y);
      bool uniform = true;
      for (int yy = y; yy < y + patch_size && uniform; ++yy) {
        const auto* m = &wsi.mask.pixels[static_cast<std::size_t>(yy) * w + x];
        uniform = std::all_of(m, m + patch_size, [first](std::uint8_t v) { return v == first; });
      }
      if (!uniform) continue;
      TilePatch tp;
      char id[64];
      std::snprintf(id, sizeof id, "%s_r%03d_c%03d", wsi.wsi_id.c_str(), row, col);
      tp.record = {id, wsi.wsi_id, row, col, first ? kTumor : kNonTumor, "", wsi.split};
      tp.image = crop(wsi.image, x, y, patch_size, patch_size);
      out.push_back(std::move(tp));
    }
  }
  return out;
}

PatchDataset build_dataset(const std::vector<WsiRecord>& wsis,
                           const std::function<bool(const WsiRecord&)>& keep, int patch_size,
                           int stride) {
  PatchDataset ds;
  bool any = false;
  for (const auto& wsi : wsis) {
    if (keep && !keep(wsi)) continue;
    any = true;
    ds.index[wsi.wsi_id];
    for (auto& tp : tile_wsi(wsi, patch_size, stride)) {
      ds.index[wsi.wsi_id][tp.record.label].push_back(tp.record.patch_id);
      ds.records.push_back(std::move(tp.record));
      ds.images.push_back(std::move(tp.image));
    }
  }
  if (!any) throw InvalidInput("build_dataset: empty WSI set");
  return ds;
}

PatchDataset filter_split(const PatchDataset& dataset, Split split) {
  PatchDataset out;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    if (dataset.records[i].split != split) continue;
    out.records.push_back(dataset.records[i]);
    if (!dataset.images.empty()) out.images.push_back(dataset.images[i]);
  }
  out.index = out.rebuild_index();
  return out;
}

DatasetSummary summarize(const PatchDataset& dataset) {
  DatasetSummary s;
  for (const auto& split : {"train", "val", "test"}) s.counts[split] = {{kNonTumor, 0}, {kTumor, 0}};
  for (const auto& r : dataset.records) ++s.counts[to_string(r.split)][r.label];
  for (const auto& [wsi, classes] : dataset.index) {
    std::size_t n = 0;
    for (const auto& [_, ids] : classes) n += ids.size();
    if (n == 0) s.empty_wsis.push_back(wsi);
  }
  s.total = dataset.records.size();
  return s;
}

nlohmann::json to_json(const DatasetSummary& summary) {
  nlohmann::json j;
  for (const auto& [split, classes] : summary.counts) {
    j["counts"][split] = {{"non_tumor", classes.at(kNonTumor)}, {"tumor", classes.at(kTumor)}};
  }
  j["empty_wsis"] = summary.empty_wsis;
  j["total"] = summary.total;
  return j;
}

void to_json(nlohmann::json& j, const PatchRecord& r) {
  j = {{"patch_id", r.patch_id}, {"wsi_id", r.wsi_id}, {"row", r.row},      {"col", r.col},
       {"label", r.label},       {"image_path", r.image_path}, {"split", to_string(r.split)}};
}

void from_json(const nlohmann::json& j, PatchRecord& r) {
  j.at("patch_id").get_to(r.patch_id);
  j.at("wsi_id").get_to(r.wsi_id);
  j.at("row").get_to(r.row);
  j.at("col").get_to(r.col);
  j.at("label").get_to(r.label);
  j.at("image_path").get_to(r.image_path);
  r.split = split_from_string(j.value("split", std::string("train")));
  if (r.label != kNonTumor && r.label != kTumor) {
    throw InvalidInput("patch " + r.patch_id + " has label outside {0, 1}");
  }
}

void write_patch_dataset(PatchDataset& dataset, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "patches");
  nlohmann::json doc;
  doc["patches"] = nlohmann::json::array();
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    auto& r = dataset.records[i];
    r.image_path = "patches/" + r.patch_id + ".png";
    if (!dataset.images.empty()) write_png(dir / r.image_path, dataset.images[i]);
    doc["patches"].push_back(r);
  }
  doc["wsis"] = nlohmann::json::array();
  for (const auto& [wsi, _] : dataset.index) doc["wsis"].push_back(wsi);
  std::ofstream(dir / "manifest.json") << doc.dump(2) << "\n";
  std::ofstream(dir / "summary.json") << to_json(summarize(dataset)).dump(2) << "\n";
}

PatchDataset read_patch_dataset(const std::filesystem::path& dir, bool load_images) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("patch manifest not found: " + (dir / "manifest.json").string());
  const auto doc = nlohmann::json::parse(in);
  PatchDataset ds;
  for (const auto& j : doc.at("patches")) ds.records.push_back(j.get<PatchRecord>());
  for (const auto& wsi : doc.value("wsis", nlohmann::json::array())) ds.index[wsi.get<std::string>()];
  for (const auto& r : ds.records) ds.index[r.wsi_id][r.label].push_back(r.patch_id);
  if (load_images) {
    for (const auto& r : ds.records) ds.images.push_back(read_png(dir / r.image_path));
  }
  return ds;
}

}  // namespace wsidg
