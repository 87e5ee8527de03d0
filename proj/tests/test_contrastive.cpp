#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "wsidg/contrastive.hpp"
#include "wsidg/random.hpp"

using namespace wsidg;
using Mat = Eigen::MatrixXd;

namespace {

Mat random_unit(int n, int d, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Mat m(n, d);
  for (auto& v : m.reshaped()) v = g(rng);
  return normalize_rows<double>(m);
}

std::vector<oracle::Vec> rows(const Mat& m) {
  std::vector<oracle::Vec> out(m.rows(), oracle::Vec(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

LossConfig tau(double t) {
  LossConfig c;
  c.temperature_patch = c.temperature_wsi = t;
  return c;
}

}  // namespace

TEST_CASE("similarity examples") {
  const Eigen::Vector2d a(1, 0), b(0, 1);
  CHECK(similarity(a, a, 1.0) == doctest::Approx(2.718282).epsilon(1e-6));
  CHECK(similarity(a, b, 0.3) == doctest::Approx(1.0));
  CHECK(similarity(a, Eigen::Vector2d(-a), 0.5) == doctest::Approx(0.135335).epsilon(1e-5));
  CHECK(similarity(a, b, 0.1) == similarity(b, a, 0.1));
  CHECK_THROWS_AS(similarity(a, b, 0.0), InvalidInput);
  CHECK_THROWS_AS(similarity(a, Eigen::Vector2d(NAN, 0), 1.0), InvalidInput);
}

TEST_CASE("prototype examples") {
  Mat u(2, 2);
  u << 1, 0, 0, 1;
  const std::vector<int> same = {0, 0};
  const std::vector<std::string> w = {"a", "a"};
  const auto p = class_prototypes<double>(u, same, w);
  REQUIRE(p.entries.size() == 1);
  CHECK(p.entries[0].vector[0] == doctest::Approx(std::sqrt(2.0) / 2));
  CHECK(p.entries[0].vector[1] == doctest::Approx(std::sqrt(2.0) / 2));
  CHECK(p.entries[0].member_count == 2);

  const std::vector<int> split = {0, 1};
  const auto q = class_prototypes<double>(u, split, w);
  REQUIRE(q.entries.size() == 2);
  CHECK(q.entries[0].vector == u.row(0).transpose());

  Mat anti(2, 2);
  anti << 1, 0, -1, 0;
  CHECK_THROWS_AS(class_prototypes<double>(anti, same, w), DegeneratePrototype);
}

TEST_CASE("prototypes do not depend on batch order") {
  Rng rng(1);
  const Mat u = random_unit(10, 4, rng);
  const std::vector<int> labels = {0, 1, 0, 1, 1, 0, 0, 1, 0, 0};
  const std::vector<std::string> w = {"a", "a", "b", "b", "a", "b", "a", "b", "a", "b"};
  std::vector<int> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Mat up(10, 4);
  std::vector<int> lp(10);
  std::vector<std::string> wp(10);
  for (int i = 0; i < 10; ++i) {
    up.row(i) = u.row(perm[i]);
    lp[i] = labels[perm[i]];
    wp[i] = w[perm[i]];
  }
  const auto a = class_prototypes<double>(u, labels, w);
  const auto b = class_prototypes<double>(up, lp, wp);
  REQUIRE(a.entries.size() == b.entries.size());
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(a.entries[i].vector == b.entries[i].vector);
    CHECK(a.entries[i].member_count == b.entries[i].member_count);
  }
}

TEST_CASE("WSI-level loss examples") {
  // Anchor a: positive p (other WSI, same class) and negative n at equal similarity.
  Mat u(3, 2);
  u << 1, 0, 0, 1, 0, -1;
  PairSpec spec;
  spec.positives = {{1}, {}, {}};
  spec.negatives = {{2}, {}, {}};
  const auto l = anchored_contrastive_loss<double>(u, spec, 0.1);
  CHECK(l.value == doctest::Approx(std::log(2.0)));
  CHECK(l.empty_positive_anchors == 2);

  spec.negatives = {{}, {}, {}};
  CHECK(anchored_contrastive_loss<double>(u, spec, 0.1).value == doctest::Approx(0.0));
}

TEST_CASE("WSI-level loss on prototypes") {
  PrototypeSet<double> set;
  auto entry = [](std::string w, int label, Eigen::Vector2d v) {
    PrototypeEntry<double> e;
    e.wsi_id = std::move(w);
    e.label = label;
    e.vector = v;
    e.member_count = 1;
    e.mean_norm = 1;
    return e;
  };
  set.entries = {entry("a", 0, {1, 0}), entry("b", 0, {1, 0})};
  // Identical positives, no negatives: every term is log(1).
  CHECK(wsi_level_loss<double>(set, LossConfig{}).value == doctest::Approx(0.0));
  PrototypeSet<double> empty;
  CHECK_THROWS_AS(wsi_level_loss<double>(empty, LossConfig{}), InvalidInput);
}

TEST_CASE("patch-level loss examples") {
  Mat two(2, 2);
  two << 1, 0, 0.6, 0.8;
  const std::vector<int> same = {1, 1};
  CHECK(patch_level_loss<double>(two, label_pairs(same), LossConfig{}).value == doctest::Approx(0.0));

  Mat three(3, 2);
  three << 1, 0, 0, 1, 0, -1;
  PairSpec spec;
  spec.positives = {{1}, {}, {}};
  spec.negatives = {{2}, {}, {}};
  CHECK(patch_level_loss<double>(three, spec, LossConfig{}).value == doctest::Approx(std::log(2.0)));
  spec.positives[0] = {5};
  CHECK_THROWS_AS(patch_level_loss<double>(three, spec, LossConfig{}), InvalidInput);
  spec.positives[0] = {0};
  CHECK_THROWS_AS(patch_level_loss<double>(three, spec, LossConfig{}), InvalidInput);
}

TEST_CASE("patch-level loss matches the direct double sum") {
  Rng rng(6);
  const Mat u = random_unit(6, 5, rng);
  const std::vector<int> labels = {0, 0, 0, 1, 1, 1};
  const double lib = patch_level_loss<double>(u, label_pairs(labels), tau(0.1)).value;
  CHECK(lib == doctest::Approx(oracle::patch_loss(rows(u), labels, 0.1)).epsilon(1e-10));
}

TEST_CASE("WSI-level loss on 2 WSIs x 2 classes matches the term-by-term oracle") {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    const Mat u = random_unit(8, 4, rng);
    const std::vector<int> labels = {0, 1, 0, 1, 0, 1, 1, 0};
    const std::vector<std::string> w = {"a", "a", "a", "a", "b", "b", "b", "b"};
    const double lib = wsi_level_loss<double>(class_prototypes<double>(u, labels, w), tau(0.1)).value;
    const double ref = oracle::wsi_loss(oracle::prototypes(rows(u), labels, w), 0.1);
    CHECK(lib == doctest::Approx(ref).epsilon(1e-10));
  }
}

TEST_CASE("losses are nonnegative and invariant to label swap, scale and order") {
  Rng rng(8);
  std::uniform_int_distribution<int> bit(0, 1);
  for (int t = 0; t < 20; ++t) {
    Mat z = random_unit(10, 6, rng) * 3.0;
    std::vector<int> labels(10), swapped(10);
    std::vector<std::string> w(10);
    for (int i = 0; i < 10; ++i) {
      labels[i] = i < 2 ? i : bit(rng);
      swapped[i] = 1 - labels[i];
      w[i] = i % 2 ? "a" : "b";
    }
    const Mat u = normalize_rows<double>(z);
    const Mat u_scaled = normalize_rows<double>(Mat(z * 7.5));
    const double lp = patch_level_loss<double>(u, label_pairs(labels), LossConfig{}).value;
    const double lw = wsi_level_loss<double>(class_prototypes<double>(u, labels, w), LossConfig{}).value;
    CHECK(lp >= 0.0);
    CHECK(lw >= 0.0);
    CHECK(patch_level_loss<double>(u, label_pairs(swapped), LossConfig{}).value == doctest::Approx(lp).epsilon(1e-12));
    CHECK(wsi_level_loss<double>(class_prototypes<double>(u, swapped, w), LossConfig{}).value ==
          doctest::Approx(lw).epsilon(1e-12));
    CHECK(patch_level_loss<double>(u_scaled, label_pairs(labels), LossConfig{}).value ==
          doctest::Approx(lp).epsilon(1e-12));

    Mat ur = u.colwise().reverse();
    std::vector<int> lr(labels.rbegin(), labels.rend());
    std::vector<std::string> wr(w.rbegin(), w.rend());
    CHECK(std::abs(patch_level_loss<double>(ur, label_pairs(lr), LossConfig{}).value - lp) < 1e-9);
    CHECK(std::abs(wsi_level_loss<double>(class_prototypes<double>(ur, lr, wr), LossConfig{}).value - lw) < 1e-9);
  }
}

TEST_CASE("contrastive gradients match finite differences in unit space") {
  Rng rng(9);
  Mat u = random_unit(7, 3, rng);
  const std::vector<int> labels = {0, 1, 0, 1, 1, 0, 0};
  const auto spec = label_pairs(labels);
  Mat g;
  anchored_contrastive_loss<double>(u, spec, 0.2, &g);
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
      Mat up = u, um = u;
      up(i, j) += 1e-6;
      um(i, j) -= 1e-6;
      const double fd = (anchored_contrastive_loss<double>(up, spec, 0.2).value -
                         anchored_contrastive_loss<double>(um, spec, 0.2).value) / 2e-6;
      CHECK(g(i, j) == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("prototype and normalization backward passes match finite differences") {
  Rng rng(10);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Mat z(6, 3);
  for (auto& v : z.reshaped()) v = gauss(rng);
  const std::vector<int> labels = {0, 1, 0, 1, 0, 1};
  const std::vector<std::string> w = {"a", "a", "a", "b", "b", "b"};
  auto f = [&](const Mat& zz, Mat* grad) {
    const Mat u = normalize_rows<double>(zz);
    const auto protos = class_prototypes<double>(u, labels, w);
    Mat gp;
    const double v = wsi_level_loss<double>(protos, LossConfig{}, grad ? &gp : nullptr).value;
    if (grad) *grad = normalize_rows_backward<double>(zz, u, prototype_backward<double>(protos, gp, zz.rows()));
    return v;
  };
  Mat g;
  f(z, &g);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      Mat zp = z, zm = z;
      zp(i, j) += 1e-6;
      zm(i, j) -= 1e-6;
      CHECK(g(i, j) == doctest::Approx((f(zp, nullptr) - f(zm, nullptr)) / 2e-6).epsilon(1e-5));
    }
  }
}

TEST_CASE("cross-entropy and the weighted total") {
  const Mat zero = Mat::Zero(5, 2);
  const std::vector<int> labels = {0, 1, 1, 0, 1};
  CHECK(cross_entropy<double>(zero, labels) == doctest::Approx(std::log(2.0)));
  LossConfig ce_only;
  ce_only.weight_wsi = ce_only.weight_patch = 0.0;
  const auto t = total_loss<double>(3.0, 4.0, zero, labels, ce_only);
  CHECK(t.total == t.l_c);
  const auto full = total_loss<double>(3.0, 4.0, zero, labels, LossConfig{});
  CHECK(full.total == doctest::Approx(7.0 + std::log(2.0)));
  const std::vector<int> bad = {0, 2, 1, 0, 1};
  CHECK_THROWS_AS(cross_entropy<double>(zero, bad), InvalidInput);
}

TEST_CASE("normalization rejects zero rows") {
  Mat z = Mat::Zero(2, 3);
  z(0, 0) = 1;
  CHECK_THROWS_AS(normalize_rows<double>(z), InvalidInput);
}
