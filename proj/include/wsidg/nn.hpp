#pragma once

// Minimal feed-forward layers with hand-written backward passes.
//
// All parameters of a network live in one flat vector; each layer reads its
// slice through a raw pointer handed down by its container, and accumulates
// into the matching slice of an equally sized gradient vector.

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "wsidg/error.hpp"
#include "wsidg/random.hpp"

namespace wsidg::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// channels x (height * width); pixel (y, x) is column y * width + x.
template <typename Scalar>
struct FeatureMap {
  Matrix<Scalar> data;
  int height = 1;
  int width = 1;

  Eigen::Index channels() const { return data.rows(); }
};

template <typename Scalar>
struct LayerCache {
  std::vector<Matrix<Scalar>> saved;
  std::vector<LayerCache> children;
  int height = 0;
  int width = 0;
};

template <typename Scalar>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Eigen::Index parameter_count() const { return 0; }
  virtual void initialize(Scalar* /*params*/, Rng& /*rng*/) const {}
  virtual FeatureMap<Scalar> forward(const Scalar* params, const FeatureMap<Scalar>& in,
                                     LayerCache<Scalar>* cache) const = 0;
  // Returns d(loss)/d(input); adds d(loss)/d(params) into `grad`.
  virtual FeatureMap<Scalar> backward(const Scalar* params, Scalar* grad,
                                      const FeatureMap<Scalar>& grad_out,
                                      const LayerCache<Scalar>& cache) const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual std::string name() const = 0;
};

namespace detail {

template <typename Scalar>
void he_normal(Scalar* w, Eigen::Index count, Eigen::Index fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (Eigen::Index i = 0; i < count; ++i) w[i] = static_cast<Scalar>(dist(rng));
}

}  // namespace detail

// 3x3 convolution, zero padding 1, stride 1. Parameters: W (out x in*9), b (out).
template <typename Scalar>
class Conv3x3 final : public Layer<Scalar> {
 public:
  Conv3x3(int in_channels, int out_channels) : in_(in_channels), out_(out_channels) {}

  Eigen::Index parameter_count() const override {
    return static_cast<Eigen::Index>(out_) * in_ * 9 + out_;
  }
  void initialize(Scalar* params, Rng& rng) const override {
    detail::he_normal(params, static_cast<Eigen::Index>(out_) * in_ * 9, in_ * 9, rng);
    std::fill(params + out_ * in_ * 9, params + parameter_count(), Scalar(0));
  }

  FeatureMap<Scalar> forward(const Scalar* params, const FeatureMap<Scalar>& in,
                             LayerCache<Scalar>* cache) const override {
    if (in.channels() != in_) throw InvalidInput("Conv3x3: channel mismatch");
    Matrix<Scalar> cols = im2col(in);
    const auto [w, b] = weights(params);
    FeatureMap<Scalar> out{w * cols, in.height, in.width};
    out.data.colwise() += b;
    if (cache) {
      cache->saved = {std::move(cols)};
      cache->height = in.height;
      cache->width = in.width;
    }
    return out;
  }

  FeatureMap<Scalar> backward(const Scalar* params, Scalar* grad,
                              const FeatureMap<Scalar>& grad_out,
                              const LayerCache<Scalar>& cache) const override {
    const auto [w, b] = weights(params);
    auto [gw, gb] = weights(grad);
    const Matrix<Scalar>& cols = cache.saved[0];
    gw.noalias() += grad_out.data * cols.transpose();
    gb += grad_out.data.rowwise().sum();
    const Matrix<Scalar> grad_cols = w.transpose() * grad_out.data;
    return col2im(grad_cols, cache.height, cache.width);
  }

  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Conv3x3>(*this); }
  std::string name() const override {
    return "conv3x3(" + std::to_string(in_) + "->" + std::to_string(out_) + ")";
  }

 private:
  template <typename Ptr>
  auto weights(Ptr p) const {
    using Map = std::conditional_t<std::is_const_v<std::remove_pointer_t<Ptr>>,
                                   Eigen::Map<const Matrix<Scalar>>, Eigen::Map<Matrix<Scalar>>>;
    using VMap = std::conditional_t<std::is_const_v<std::remove_pointer_t<Ptr>>,
                                    Eigen::Map<const Vector<Scalar>>, Eigen::Map<Vector<Scalar>>>;
    return std::pair<Map, VMap>(Map(p, out_, in_ * 9), VMap(p + out_ * in_ * 9, out_));
  }

  Matrix<Scalar> im2col(const FeatureMap<Scalar>& in) const {
    const int h = in.height, w = in.width;
    Matrix<Scalar> cols = Matrix<Scalar>::Zero(in_ * 9, static_cast<Eigen::Index>(h) * w);
    for (int c = 0; c < in_; ++c) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const Eigen::Index row = c * 9 + ky * 3 + kx;
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= h) continue;
            for (int x = 0; x < w; ++x) {
              const int sx = x + kx - 1;
              if (sx < 0 || sx >= w) continue;
              cols(row, y * w + x) = in.data(c, sy * w + sx);
            }
          }
        }
      }
    }
    return cols;
  }

  FeatureMap<Scalar> col2im(const Matrix<Scalar>& cols, int h, int w) const {
    FeatureMap<Scalar> out{Matrix<Scalar>::Zero(in_, static_cast<Eigen::Index>(h) * w), h, w};
    for (int c = 0; c < in_; ++c) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const Eigen::Index row = c * 9 + ky * 3 + kx;
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= h) continue;
            for (int x = 0; x < w; ++x) {
              const int sx = x + kx - 1;
              if (sx < 0 || sx >= w) continue;
              out.data(c, sy * w + sx) += cols(row, y * w + x);
            }
          }
        }
      }
    }
    return out;
  }

  int in_, out_;
};

// Channel mixing without bias; used for residual shortcuts.
template <typename Scalar>
class Conv1x1 final : public Layer<Scalar> {
 public:
  Conv1x1(int in_channels, int out_channels) : in_(in_channels), out_(out_channels) {}

  Eigen::Index parameter_count() const override { return static_cast<Eigen::Index>(out_) * in_; }
  void initialize(Scalar* params, Rng& rng) const override {
    detail::he_normal(params, parameter_count(), in_, rng);
  }
  FeatureMap<Scalar> forward(const Scalar* params, const FeatureMap<Scalar>& in,
                             LayerCache<Scalar>* cache) const override {
    Eigen::Map<const Matrix<Scalar>> w(params, out_, in_);
    if (cache) cache->saved = {in.data};
    return {w * in.data, in.height, in.width};
  }
  FeatureMap<Scalar> backward(const Scalar* params, Scalar* grad,
                              const FeatureMap<Scalar>& grad_out,
                              const LayerCache<Scalar>& cache) const override {
    Eigen::Map<const Matrix<Scalar>> w(params, out_, in_);
    Eigen::Map<Matrix<Scalar>> gw(grad, out_, in_);
    gw.noalias() += grad_out.data * cache.saved[0].transpose();
    return {w.transpose() * grad_out.data, grad_out.height, grad_out.width};
  }
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Conv1x1>(*this); }
  std::string name() const override { return "conv1x1"; }

 private:
  int in_, out_;
};

template <typename Scalar>
class Relu final : public Layer<Scalar> {
 public:
  FeatureMap<Scalar> forward(const Scalar*, const FeatureMap<Scalar>& in,
                             LayerCache<Scalar>* cache) const override {
    if (cache) cache->saved = {in.data};
    return {in.data.cwiseMax(Scalar(0)), in.height, in.width};
  }
  FeatureMap<Scalar> backward(const Scalar*, Scalar*, const FeatureMap<Scalar>& grad_out,
                              const LayerCache<Scalar>& cache) const override {
    const auto& x = cache.saved[0];
    return {(x.array() > Scalar(0)).select(grad_out.data, Scalar(0)), grad_out.height, grad_out.width};
  }
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Relu>(*this); }
  std::string name() const override { return "relu"; }
};

// 2x2 average pooling, stride 2. Odd trailing rows/columns are dropped.
template <typename Scalar>
class AvgPool2 final : public Layer<Scalar> {
 public:
  FeatureMap<Scalar> forward(const Scalar*, const FeatureMap<Scalar>& in,
                             LayerCache<Scalar>* cache) const override {
    const int h = in.height / 2, w = in.width / 2;
    if (h == 0 || w == 0) throw InvalidInput("AvgPool2: input smaller than 2x2");
    FeatureMap<Scalar> out{Matrix<Scalar>(in.channels(), static_cast<Eigen::Index>(h) * w), h, w};
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int s = 2 * y * in.width + 2 * x;
        out.data.col(y * w + x) = Scalar(0.25) * (in.data.col(s) + in.data.col(s + 1) +
                                                  in.data.col(s + in.width) + in.data.col(s + in.width + 1));
      }
    }
    if (cache) {
      cache->height = in.height;
      cache->width = in.width;
    }
    return out;
  }
  FeatureMap<Scalar> backward(const Scalar*, Scalar*, const FeatureMap<Scalar>& grad_out,
                              const LayerCache<Scalar>& cache) const override {
    const int ih = cache.height, iw = cache.width;
    FeatureMap<Scalar> g{Matrix<Scalar>::Zero(grad_out.channels(), static_cast<Eigen::Index>(ih) * iw), ih, iw};
    for (int y = 0; y < grad_out.height; ++y) {
      for (int x = 0; x < grad_out.width; ++x) {
        const auto q = Scalar(0.25) * grad_out.data.col(y * grad_out.width + x);
        const int s = 2 * y * iw + 2 * x;
        g.data.col(s) = q;
        g.data.col(s + 1) = q;
        g.data.col(s + iw) = q;
        g.data.col(s + iw + 1) = q;
      }
    }
    return g;
  }
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<AvgPool2>(*this); }
  std::string name() const override { return "avgpool2"; }
};

template <typename Scalar>
class GlobalAvgPool final : public Layer<Scalar> {
 public:
  FeatureMap<Scalar> forward(const Scalar*, const FeatureMap<Scalar>& in,
                             LayerCache<Scalar>* cache) const override {
    if (cache) {
      cache->height = in.height;
      cache->width = in.width;
    }
    return {in.data.rowwise().mean(), 1, 1};
  }
  FeatureMap<Scalar> backward(const Scalar*, Scalar*, const FeatureMap<Scalar>& grad_out,
                              const LayerCache<Scalar>& cache) const override {
    const Eigen::Index n = static_cast<Eigen::Index>(cache.height) * cache.width;
    return {grad_out.data.replicate(1, n) / static_cast<Scalar>(n), cache.height, cache.width};
  }
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
  std::string name() const override { return "global_avgpool"; }
};

// Affine map on a flattened (channels x 1) input. Parameters: W (out x in), b (out).
template <typename Scalar>
class Linear final : public Layer<Scalar> {
 public:
  Linear(int in_features, int out_features) : in_(in_features), out_(out_features) {}

  int in_features() const { return in_; }
  int out_features() const { return out_; }

  Eigen::Index parameter_count() const override { return static_cast<Eigen::Index>(out_) * in_ + out_; }
  void initialize(Scalar* params, Rng& rng) const override {
    detail::he_normal(params, static_cast<Eigen::Index>(out_) * in_, in_, rng);
    std::fill(params + out_ * in_, params + parameter_count(), Scalar(0));
  }
  FeatureMap<Scalar> forward(const Scalar* params, const FeatureMap<Scalar>& in,
                             LayerCache<Scalar>* cache) const override {
    if (in.data.size() != in_) throw InvalidInput("Linear: expected " + std::to_string(in_) + " inputs");
    Eigen::Map<const Matrix<Scalar>> w(params, out_, in_);
    Eigen::Map<const Vector<Scalar>> b(params + out_ * in_, out_);
    Eigen::Map<const Vector<Scalar>> x(in.data.data(), in_);
    if (cache) cache->saved = {x};
    return {w * x + b, 1, 1};
  }
  FeatureMap<Scalar> backward(const Scalar* params, Scalar* grad, const FeatureMap<Scalar>& grad_out,
                              const LayerCache<Scalar>& cache) const override {
    Eigen::Map<const Matrix<Scalar>> w(params, out_, in_);
    Eigen::Map<Matrix<Scalar>> gw(grad, out_, in_);
    Eigen::Map<Vector<Scalar>> gb(grad + out_ * in_, out_);
    Eigen::Map<const Vector<Scalar>> g(grad_out.data.data(), out_);
    gw.noalias() += g * cache.saved[0].transpose();
    gb += g;
    return {w.transpose() * g, 1, 1};
  }
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Linear>(*this); }
  std::string name() const override {
    return "linear(" + std::to_string(in_) + "->" + std::to_string(out_) + ")";
  }

 private:
  int in_, out_;
};

template <typename Scalar>
class Sequential final : public Layer<Scalar> {
 public:
  Sequential() = default;
  Sequential(const Sequential& other) : offsets_(other.offsets_), total_(other.total_) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  Sequential& operator=(const Sequential& other) {
    if (this != &other) *this = Sequential(other);
    return *this;
  }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  Sequential& add(std::unique_ptr<Layer<Scalar>> layer) {
    offsets_.push_back(total_);
    total_ += layer->parameter_count();
    layers_.push_back(std::move(layer));
    return *this;
  }
  template <typename L, typename... Args>
  Sequential& emplace(Args&&... args) {
    return add(std::make_unique<L>(std::forward<Args>(args)...));
  }

  std::size_t size() const { return layers_.size(); }
  const Layer<Scalar>& layer(std::size_t i) const { return *layers_[i]; }

  Eigen::Index parameter_count() const override { return total_; }
  void initialize(Scalar* params, Rng& rng) const override {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->initialize(params + offsets_[i], rng);
  }
  FeatureMap<Scalar> forward(const Scalar* params, const FeatureMap<Scalar>& in,
                             LayerCache<Scalar>* cache) const override {
    if (cache) cache->children.resize(layers_.size());
    FeatureMap<Scalar> x = in;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i]->forward(params + offsets_[i], x, cache ? &cache->children[i] : nullptr);
    }
    return x;
  }
  FeatureMap<Scalar> backward(const Scalar* params, Scalar* grad, const FeatureMap<Scalar>& grad_out,
                              const LayerCache<Scalar>& cache) const override {
    FeatureMap<Scalar> g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      g = layers_[i]->backward(params + offsets_[i], grad + offsets_[i], g, cache.children[i]);
    }
    return g;
  }
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Sequential>(*this); }
  std::string name() const override {
    std::string s = "[";
    for (std::size_t i = 0; i < layers_.size(); ++i) s += (i ? ", " : "") + layers_[i]->name();
    return s + "]";
  }

 private:
  std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
  std::vector<Eigen::Index> offsets_;
  Eigen::Index total_ = 0;
};

// y = body(x) + shortcut(x); shortcut is identity unless channels change.
template <typename Scalar>
class Residual final : public Layer<Scalar> {
 public:
  Residual(int in_channels, int out_channels) {
    body_.template emplace<Conv3x3<Scalar>>(in_channels, out_channels)
        .template emplace<Relu<Scalar>>()
        .template emplace<Conv3x3<Scalar>>(out_channels, out_channels);
    if (in_channels != out_channels) {
      shortcut_.template emplace<Conv1x1<Scalar>>(in_channels, out_channels);
    }
  }

  Eigen::Index parameter_count() const override {
    return body_.parameter_count() + shortcut_.parameter_count();
  }
  void initialize(Scalar* params, Rng& rng) const override {
    body_.initialize(params, rng);
    shortcut_.initialize(params + body_.parameter_count(), rng);
  }
  FeatureMap<Scalar> forward(const Scalar* params, const FeatureMap<Scalar>& in,
                             LayerCache<Scalar>* cache) const override {
    if (cache) cache->children.resize(2);
    FeatureMap<Scalar> y = body_.forward(params, in, cache ? &cache->children[0] : nullptr);
    if (shortcut_.size() == 0) {
      y.data += in.data;
    } else {
      y.data += shortcut_.forward(params + body_.parameter_count(), in,
                                  cache ? &cache->children[1] : nullptr).data;
    }
    return y;
  }
  FeatureMap<Scalar> backward(const Scalar* params, Scalar* grad, const FeatureMap<Scalar>& grad_out,
                              const LayerCache<Scalar>& cache) const override {
    FeatureMap<Scalar> g = body_.backward(params, grad, grad_out, cache.children[0]);
    if (shortcut_.size() == 0) {
      g.data += grad_out.data;
    } else {
      g.data += shortcut_.backward(params + body_.parameter_count(), grad + body_.parameter_count(),
                                   grad_out, cache.children[1]).data;
    }
    return g;
  }
  std::unique_ptr<Layer<Scalar>> clone() const override { return std::make_unique<Residual>(*this); }
  std::string name() const override { return "residual" + body_.name(); }

 private:
  Sequential<Scalar> body_;
  Sequential<Scalar> shortcut_;
};

}  // namespace wsidg::nn
