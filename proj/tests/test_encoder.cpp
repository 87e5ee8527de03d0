#include <doctest.h>

#include "fixtures.hpp"
#include "wsidg/encoder.hpp"
#include "wsidg/error.hpp"
#include "wsidg/nn.hpp"

using namespace wsidg;

namespace {

// Scalar objective of the encoder output: sum_k w_k z_k + sum_k u_k logit_k.
double probe(const Encoder<double>& enc, const nn::FeatureMap<double>& x, const Eigen::VectorXd& w,
             const Eigen::VectorXd& u) {
  const Eigen::VectorXd z = enc.forward(x);
  Eigen::MatrixXd zm = z.transpose();
  return w.dot(z) + u.dot(enc.classify(zm).row(0).transpose());
}

double worst_fd_error(const EncoderConfig& cfg, int coords) {
  Encoder<double> enc(cfg, 11);
  Rng rng(3);
  const auto x = enc.prepare(fixtures::patch(cfg.patch_size, 1, 10.0, rng));
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::VectorXd w(cfg.embed_dim), u(2);
  for (auto& v : w) v = g(rng);
  for (auto& v : u) v = g(rng);

  Encoder<double>::Trace trace;
  const Eigen::VectorXd z = enc.forward(x, &trace);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(enc.parameter_count());
  Eigen::MatrixXd zm = z.transpose();
  const Eigen::MatrixXd dz_extra = enc.classify_backward(zm, u.transpose(), grad);
  enc.backward(trace, w + dz_extra.row(0).transpose(), grad);

  std::uniform_int_distribution<Eigen::Index> pick(0, enc.parameter_count() - 1);
  double worst = 0;
  for (int i = 0; i < coords; ++i) {
    const auto k = pick(rng);
    const double h = 1e-5, saved = enc.parameters()[k];
    enc.parameters()[k] = saved + h;
    const double fp = probe(enc, x, w, u);
    enc.parameters()[k] = saved - h;
    const double fm = probe(enc, x, w, u);
    enc.parameters()[k] = saved;
    const double fd = (fp - fm) / (2 * h);
    const double err = std::abs(fd - grad[k]) / std::max(1e-6, std::abs(fd) + std::abs(grad[k]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST_CASE("tiny encoder backward matches finite differences") {
  CHECK(worst_fd_error(fixtures::tiny_encoder_config(), 60) < 1e-4);
}

TEST_CASE("resnet18-like encoder backward matches finite differences") {
  auto cfg = fixtures::tiny_encoder_config();
  cfg.backbone = Backbone::ResNet18Like;
  cfg.patch_size = 32;
  cfg.stem_pool = 2;
  CHECK(worst_fd_error(cfg, 60) < 1e-4);
}

TEST_CASE("stem pools the patch into [-1, 1] and rejects wrong shapes") {
  auto cfg = fixtures::tiny_encoder_config();
  Encoder<double> enc(cfg, 1);
  Image white(16, 16, 3, 255), black(16, 16, 3, 0);
  const auto w = enc.prepare(white), b = enc.prepare(black);
  CHECK(w.height == 8);
  CHECK(w.width == 8);
  CHECK(w.data.minCoeff() == doctest::Approx(1.0));
  CHECK(b.data.maxCoeff() == doctest::Approx(-1.0));
  CHECK_THROWS_AS(enc.prepare(Image(8, 8, 3)), InvalidInput);
  CHECK_THROWS_AS(enc.prepare(Image(16, 16, 1)), InvalidInput);
}

TEST_CASE("default encoder produces 128-d embeddings and is seed-deterministic") {
  EncoderConfig cfg;
  Encoder<double> a(cfg, 5), b(cfg, 5), c(cfg, 6);
  CHECK(a.parameters() == b.parameters());
  CHECK_FALSE(a.parameters() == c.parameters());
  Rng rng(1);
  std::vector<Image> patches = {fixtures::patch(256, 0, 0.0, rng), fixtures::patch(256, 1, 0.0, rng)};
  const auto z = a.embed(patches);
  CHECK(z.rows() == 2);
  CHECK(z.cols() == 128);
  CHECK(z.allFinite());
  CHECK(a.classify(z).cols() == 2);
}

TEST_CASE("style features: activations mode and raw color mode") {
  auto cfg = fixtures::tiny_encoder_config();
  Encoder<double> enc(cfg, 2);
  Rng rng(4);
  const auto p = fixtures::patch(16, 0, 0.0, rng);
  const auto s = enc.style_features(p);
  CHECK(s.size() == 2 * (cfg.base_width + 2 * cfg.base_width));
  CHECK(s.allFinite());

  Image flat(16, 16, 3);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      flat.at(x, y, 0) = 10;
      flat.at(x, y, 1) = 20;
      flat.at(x, y, 2) = static_cast<std::uint8_t>(x % 2 ? 40 : 20);
    }
  const auto raw = raw_color_style(flat);
  REQUIRE(raw.size() == 6);
  CHECK(raw[0] == doctest::Approx(10));
  CHECK(raw[1] == doctest::Approx(20));
  CHECK(raw[2] == doctest::Approx(30));
  CHECK(raw[3] == doctest::Approx(0));
  CHECK(raw[5] == doctest::Approx(10));
}

TEST_CASE("checkpoints round-trip and refuse a mismatched config") {
  fixtures::TempDir tmp("ckpt");
  auto cfg = fixtures::tiny_encoder_config();
  Encoder<double> enc(cfg, 9);
  Checkpoint ck{cfg, enc.parameters(), serialize_rng(Rng(3)), {{"epoch", 4}}};
  save_checkpoint(tmp.path / "a.ckpt", ck);
  const auto back = load_checkpoint(tmp.path / "a.ckpt");
  CHECK(back.config == cfg);
  CHECK(back.parameters == enc.parameters());
  CHECK(back.metadata.at("epoch") == 4);
  CHECK(deserialize_rng(back.rng_state) == Rng(3));
  CHECK(encoder_from_checkpoint(back).parameters() == enc.parameters());
  auto other = cfg;
  other.embed_dim = 7;
  CHECK_THROWS_AS(encoder_from_checkpoint(back, other), InvalidInput);
  CHECK_THROWS(load_checkpoint(tmp.path / "missing.ckpt"));
}

TEST_CASE("pretrained init needs a checkpoint path") {
  auto cfg = fixtures::tiny_encoder_config();
  cfg.pretrained_init = true;
  CHECK_THROWS_AS(make_encoder(cfg, 1), InvalidInput);
}

TEST_CASE("invalid encoder configs are rejected") {
  auto cfg = fixtures::tiny_encoder_config();
  cfg.stem_pool = 3;
  CHECK_THROWS_AS(Encoder<double>(cfg, 1), InvalidInput);
  cfg = fixtures::tiny_encoder_config();
  cfg.embed_dim = 0;
  CHECK_THROWS_AS(Encoder<double>(cfg, 1), InvalidInput);
}
