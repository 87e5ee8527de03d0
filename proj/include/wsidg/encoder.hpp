#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wsidg/error.hpp"
#include "wsidg/image.hpp"
#include "wsidg/nn.hpp"
#include "wsidg/random.hpp"

namespace wsidg {

enum class Backbone { Tiny, ResNet18Like };

std::string to_string(Backbone b);
Backbone backbone_from_string(const std::string& name);

struct EncoderConfig {
  Backbone backbone = Backbone::Tiny;
  int embed_dim = 128;    // D
  int hidden_dim = 64;    // width of the first projection layer
  int base_width = 8;     // channels of the first backbone stage
  int patch_size = 256;
  int stem_pool = 8;      // fixed average-pool factor applied to the raw patch
  bool pretrained_init = false;
  std::string pretrained_path;  // checkpoint to start from when pretrained_init

  void validate() const;
  friend bool operator==(const EncoderConfig& a, const EncoderConfig& b) {
    return a.backbone == b.backbone && a.embed_dim == b.embed_dim && a.hidden_dim == b.hidden_dim &&
           a.base_width == b.base_width && a.patch_size == b.patch_size && a.stem_pool == b.stem_pool;
  }
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

enum class StyleMode { Activations /* A */, RawColor /* B */ };

StyleMode style_mode_from_string(const std::string& name);
std::string to_string(StyleMode mode);

// Per-channel means followed by per-channel standard deviations.
using StyleFeature = Eigen::VectorXd;

// Channel mean/std of the raw 8-bit RGB values of a patch.
StyleFeature raw_color_style(const Image& patch);

// Patch encoder f: fixed average-pool stem, convolutional backbone, two-layer
// projection head producing the embedding v, plus a linear 2-class head.
//
// Inputs are 8-bit RGB patches of config.patch_size; the stem maps them to
// (patch_size / stem_pool)^2 pixels with values in [-1, 1].
template <typename Scalar>
class Encoder {
 public:
  using Matrix = nn::Matrix<Scalar>;
  using Vector = nn::Vector<Scalar>;
  using FeatureMap = nn::FeatureMap<Scalar>;
  using Cache = nn::LayerCache<Scalar>;

  static constexpr int kClasses = 2;

  struct Trace {
    std::vector<Cache> stages;
    Cache head;
  };

  Encoder(const EncoderConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    build();
    params_ = Vector::Zero(total_);
    Rng rng(mix_seed(seed, 7));
    for (std::size_t i = 0; i < stages_.size(); ++i) stages_[i].initialize(params_.data() + stage_offsets_[i], rng);
    head_.initialize(params_.data() + head_offset_, rng);
    classifier_.initialize(params_.data() + classifier_offset_, rng);
  }

  const EncoderConfig& config() const { return config_; }
  Eigen::Index parameter_count() const { return total_; }
  const Vector& parameters() const { return params_; }
  Vector& parameters() { return params_; }
  Eigen::Index classifier_offset() const { return classifier_offset_; }
  int input_side() const { return config_.patch_size / config_.stem_pool; }

  // Stem: rejects anything but patch_size x patch_size x 3.
  FeatureMap prepare(const Image& patch) const {
    if (patch.width != config_.patch_size || patch.height != config_.patch_size || patch.channels != 3) {
      throw InvalidInput("encoder expects " + std::to_string(config_.patch_size) + "x" +
                         std::to_string(config_.patch_size) + "x3 patches, got " +
                         std::to_string(patch.width) + "x" + std::to_string(patch.height) + "x" +
                         std::to_string(patch.channels));
    }
    const int side = input_side(), k = config_.stem_pool;
    FeatureMap fm{Matrix::Zero(3, static_cast<Eigen::Index>(side) * side), side, side};
    const double scale = 2.0 / (255.0 * k * k);
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        for (int c = 0; c < 3; ++c) {
          unsigned sum = 0;
          for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) sum += patch.at(x * k + dx, y * k + dy, c);
          }
          fm.data(c, y * side + x) = static_cast<Scalar>(sum * scale - 1.0);
        }
      }
    }
    return fm;
  }

  // Raw projection output z (the embedding before L2 normalization).
  Vector forward(const FeatureMap& input, Trace* trace = nullptr) const {
    if (trace) trace->stages.resize(stages_.size());
    FeatureMap x = input;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      x = stages_[i].forward(params_.data() + stage_offsets_[i], x, trace ? &trace->stages[i] : nullptr);
    }
    x = head_.forward(params_.data() + head_offset_, x, trace ? &trace->head : nullptr);
    return Eigen::Map<const Vector>(x.data.data(), x.data.size());
  }

  // Adds d(loss)/d(params) for one sample given d(loss)/dz.
  void backward(const Trace& trace, const Vector& grad_embedding, Vector& grad) const {
    FeatureMap g{grad_embedding, 1, 1};
    g = head_.backward(params_.data() + head_offset_, grad.data() + head_offset_, g, trace.head);
    for (std::size_t i = stages_.size(); i-- > 0;) {
      g = stages_[i].backward(params_.data() + stage_offsets_[i], grad.data() + stage_offsets_[i], g,
                              trace.stages[i]);
    }
  }

  // batch x D
  Matrix embed_prepared(std::span<const FeatureMap> inputs) const {
    Matrix out(static_cast<Eigen::Index>(inputs.size()), config_.embed_dim);
    for (std::size_t i = 0; i < inputs.size(); ++i) out.row(i) = forward(inputs[i]).transpose();
    return out;
  }

  Matrix embed(std::span<const Image> patches) const {
    std::vector<FeatureMap> inputs;
    inputs.reserve(patches.size());
    for (const auto& p : patches) inputs.push_back(prepare(p));
    return embed_prepared(inputs);
  }

  // batch x 2 logits from batch x D embeddings.
  Matrix classify(const Matrix& embeddings) const {
    if (embeddings.cols() != config_.embed_dim) throw InvalidInput("classify: embedding width mismatch");
    const auto [w, b] = classifier_weights();
    Matrix logits = embeddings * w.transpose();
    logits.rowwise() += b.transpose();
    return logits;
  }

  // Accumulates classifier gradients and returns d(loss)/d(embeddings).
  Matrix classify_backward(const Matrix& embeddings, const Matrix& grad_logits, Vector& grad) const {
    const auto [w, b] = classifier_weights();
    Eigen::Map<Matrix> gw(grad.data() + classifier_offset_, kClasses, config_.embed_dim);
    Eigen::Map<Vector> gb(grad.data() + classifier_offset_ + kClasses * config_.embed_dim, kClasses);
    gw.noalias() += grad_logits.transpose() * embeddings;
    gb += grad_logits.colwise().sum().transpose();
    return grad_logits * w;
  }

  // Channel mean/std of the outputs of the first two backbone stages.
  StyleFeature style_features(const FeatureMap& input) const {
    std::vector<double> means, stds;
    FeatureMap x = input;
    for (std::size_t i = 0; i < 2 && i < stages_.size(); ++i) {
      x = stages_[i].forward(params_.data() + stage_offsets_[i], x, nullptr);
      const Eigen::ArrayXXd a = x.data.template cast<double>().array();
      const Eigen::ArrayXd mu = a.rowwise().mean();
      const Eigen::ArrayXd var = (a.colwise() - mu).square().rowwise().mean();
      for (Eigen::Index c = 0; c < a.rows(); ++c) {
        means.push_back(mu(c));
        stds.push_back(std::sqrt(var(c)));
      }
    }
    StyleFeature f(static_cast<Eigen::Index>(means.size() + stds.size()));
    for (std::size_t i = 0; i < means.size(); ++i) f(i) = means[i];
    for (std::size_t i = 0; i < stds.size(); ++i) f(means.size() + i) = stds[i];
    return f;
  }

  StyleFeature style_features(const Image& patch) const { return style_features(prepare(patch)); }

  std::string describe() const {
    std::string s;
    for (const auto& st : stages_) s += st.name() + " ";
    return s + head_.name() + " " + classifier_.name();
  }

 private:
  void build() {
    using namespace nn;
    const int w = config_.base_width;
    if (config_.backbone == Backbone::Tiny) {
      stages_.resize(3);
      stages_[0].template emplace<Conv3x3<Scalar>>(3, w).template emplace<Relu<Scalar>>().template emplace<AvgPool2<Scalar>>();
      stages_[1].template emplace<Conv3x3<Scalar>>(w, 2 * w).template emplace<Relu<Scalar>>().template emplace<AvgPool2<Scalar>>();
      stages_[2].template emplace<Conv3x3<Scalar>>(2 * w, 4 * w).template emplace<Relu<Scalar>>().template emplace<GlobalAvgPool<Scalar>>();
      feature_dim_ = 4 * w;
    } else {
      // Four stages of two basic residual blocks; pooling stands in for strided convs.
      stages_.resize(4);
      stages_[0].template emplace<Conv3x3<Scalar>>(3, w).template emplace<Relu<Scalar>>();
      int channels = w;
      for (int s = 0; s < 4; ++s) {
        const int out = w << s;
        auto& st = stages_[s];
        st.template emplace<Residual<Scalar>>(channels, out).template emplace<Relu<Scalar>>();
        st.template emplace<Residual<Scalar>>(out, out).template emplace<Relu<Scalar>>();
        if (s < 3) {
          st.template emplace<AvgPool2<Scalar>>();
        } else {
          st.template emplace<GlobalAvgPool<Scalar>>();
        }
        channels = out;
      }
      feature_dim_ = channels;
    }
    head_.template emplace<Linear<Scalar>>(feature_dim_, config_.hidden_dim)
        .template emplace<Relu<Scalar>>()
        .template emplace<Linear<Scalar>>(config_.hidden_dim, config_.embed_dim);
    classifier_.template emplace<Linear<Scalar>>(config_.embed_dim, kClasses);

    total_ = 0;
    for (const auto& st : stages_) {
      stage_offsets_.push_back(total_);
      total_ += st.parameter_count();
    }
    head_offset_ = total_;
    total_ += head_.parameter_count();
    classifier_offset_ = total_;
    total_ += classifier_.parameter_count();
  }

  auto classifier_weights() const {
    return std::pair(Eigen::Map<const Matrix>(params_.data() + classifier_offset_, kClasses, config_.embed_dim),
                     Eigen::Map<const Vector>(params_.data() + classifier_offset_ + kClasses * config_.embed_dim,
                                              kClasses));
  }

  EncoderConfig config_;
  std::vector<nn::Sequential<Scalar>> stages_;
  nn::Sequential<Scalar> head_;
  nn::Sequential<Scalar> classifier_;
  std::vector<Eigen::Index> stage_offsets_;
  Eigen::Index head_offset_ = 0;
  Eigen::Index classifier_offset_ = 0;
  Eigen::Index total_ = 0;
  int feature_dim_ = 0;
  Vector params_;
};

// Versioned binary checkpoint:
//   "WSIDGCKP" | u32 version | u64 meta length | meta JSON | u64 n | n x f64 params
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  EncoderConfig config;
  Eigen::VectorXd parameters;
  std::string rng_state;
  nlohmann::json metadata = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Loads `ckpt` into an encoder built for `expected`; throws InvalidInput on mismatch.
Encoder<double> encoder_from_checkpoint(const Checkpoint& ckpt, const EncoderConfig& expected);
Encoder<double> encoder_from_checkpoint(const Checkpoint& ckpt);

// Applies pretrained_init when requested.
Encoder<double> make_encoder(const EncoderConfig& config, std::uint64_t seed);

}  // namespace wsidg
