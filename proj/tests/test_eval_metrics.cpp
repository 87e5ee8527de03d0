#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "wsidg/error.hpp"
#include "wsidg/eval_metrics.hpp"

using namespace wsidg;

TEST_CASE("metrics: hand example") {
  const auto r = metrics({3, 1, 2, 4});
  CHECK(r.precision == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(r.recall == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(r.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(r.f1_non_tumor == doctest::Approx(8.0 / 11.0).epsilon(1e-12));
  CHECK(r.macro_f1 == doctest::Approx(0.696970).epsilon(1e-6));
  CHECK_FALSE(r.precision_undefined);
}

TEST_CASE("metrics: zero denominators give 0 and set flags") {
  const auto none_predicted = metrics({0, 0, 3, 5});
  CHECK(none_predicted.precision == 0.0);
  CHECK(none_predicted.precision_undefined);
  CHECK(none_predicted.recall == 0.0);
  CHECK(none_predicted.f1 == 0.0);

  const auto no_tumor = metrics({0, 0, 0, 5});
  CHECK(no_tumor.recall_undefined);
  CHECK(no_tumor.f1_undefined);
  CHECK(no_tumor.f1_non_tumor == 1.0);
  CHECK(no_tumor.macro_f1 == 0.5);

  const auto all_tumor = metrics({4, 0, 0, 0});
  CHECK(all_tumor.f1 == 1.0);
  CHECK(all_tumor.non_tumor_undefined);
}

TEST_CASE("metrics: 100 random label vectors match an independent recount") {
  Rng rng(99);
  for (int t = 0; t < 100; ++t) {
    std::uniform_int_distribution<int> len(1, 60), bit(0, 1);
    const int n = len(rng);
    std::vector<int> pred(n), truth(n);
    for (int i = 0; i < n; ++i) pred[i] = bit(rng), truth[i] = bit(rng);
    const auto r = metrics(confusion(pred, truth));
    const auto o = oracle::recount(pred, truth);
    CHECK(r.counts.total() == n);
    CHECK(r.precision == doctest::Approx(o.precision).epsilon(1e-12));
    CHECK(r.recall == doctest::Approx(o.recall).epsilon(1e-12));
    CHECK(r.f1 == doctest::Approx(o.f1).epsilon(1e-12));
    CHECK(r.macro_f1 == doctest::Approx(o.macro_f1).epsilon(1e-12));
  }
}

TEST_CASE("confusion rejects bad input") {
  const std::vector<int> a{0, 1}, b{0}, c{0, 2};
  CHECK_THROWS_AS(confusion(a, b), InvalidInput);
  CHECK_THROWS_AS(confusion(a, c), InvalidInput);
  CHECK(confusion(a, a) == ConfusionCounts{1, 0, 0, 1});
}

TEST_CASE("report json roundtrip") {
  const auto r = metrics({3, 1, 2, 4});
  const auto back = metrics_from_json(to_json(r));
  CHECK(back.macro_f1 == r.macro_f1);
  CHECK(back.counts == r.counts);
}

TEST_CASE("comparison table has fixed mode order") {
  std::map<std::string, MetricsReport> runs;
  runs["full"] = metrics({3, 1, 2, 4});
  runs["baseline_ce_supcon"] = metrics({1, 1, 1, 1});
  runs["baseline_ce"] = metrics({0, 0, 3, 5});
  const auto csv = comparison_csv(runs);
  std::istringstream in(csv);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "method,precision,recall,f1,macro_f1");
  CHECK(lines[1].rfind("baseline_ce,", 0) == 0);
  CHECK(lines[2].rfind("baseline_ce_supcon,", 0) == 0);
  CHECK(lines[3] == "full,0.7500,0.6000,0.6667,0.6970");

  fixtures::TempDir dir("report");
  write_report(runs, dir.path / "c.csv", dir.path / "c.png");
  CHECK(std::filesystem::file_size(dir.path / "c.png") > 0);
  std::ifstream f(dir.path / "c.csv");
  std::stringstream ss;
  ss << f.rdbuf();
  CHECK(ss.str() == csv);
}

TEST_CASE("predict_mask tiles the slide and leaves the uncovered border at 0") {
  const Encoder<double> enc(fixtures::tiny_encoder_config(), 3);
  WsiRecord wsi;
  wsi.wsi_id = "w";
  wsi.image = Image(40, 32, 3, 200);
  wsi.mask = Image(40, 32, 1, 0);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 16; ++x) wsi.mask.at(x, y) = 1;
  }
  for (int x = 16; x < 24; ++x) wsi.mask.at(x, 0) = 1;  // one mixed tile
  const auto p = predict_mask(enc, wsi);
  CHECK(p.rows == 2);
  CHECK(p.cols == 2);
  CHECK(p.labels.size() == 4);
  CHECK(p.mask.width == 40);
  CHECK(p.mask.height == 32);
  CHECK(p.truth == std::vector<int>{1, 0, 1, 0});
  CHECK(p.uniform == std::vector<bool>{true, false, true, true});
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      CHECK(p.mask.at(c * 16 + 5, r * 16 + 7) == p.labels[r * 2 + c]);
    }
  }
  for (int y = 0; y < 32; ++y) {
    for (int x = 32; x < 40; ++x) CHECK(p.mask.at(x, y) == 0);
  }
  // Identical pixels give identical predictions.
  CHECK(p.labels[0] == p.labels[3]);

  const auto ev = evaluate_wsis(enc, std::span(&wsi, 1));
  CHECK(ev.patches.counts.total() == 3);
  CHECK(ev.all_tiles.counts.total() == 4);

  WsiRecord tiny = wsi;
  tiny.image = Image(8, 8, 3, 0);
  CHECK_THROWS_AS(predict_mask(enc, tiny), InvalidInput);
}
