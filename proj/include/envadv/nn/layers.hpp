// Copyright 2026 The envadv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ENVADV_NN_LAYERS_HPP_
#define ENVADV_NN_LAYERS_HPP_

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "envadv/common.hpp"
#include "envadv/nn/tensor.hpp"

namespace envadv::nn {

/// Base class for differentiable layers. forward() keeps whatever backward()
/// needs when mode.train is set; infer() is const and uses running
/// statistics, so it can be called concurrently on a shared model.
template <typename Scalar>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const std::string& name() const { return name_; }

  virtual Shape output_shape(const Shape& in) const = 0;
  virtual FeatureMaps<Scalar> forward(const FeatureMaps<Scalar>& x, Mode mode) = 0;
  virtual FeatureMaps<Scalar> infer(const FeatureMaps<Scalar>& x) const = 0;
  /// Accumulates parameter gradients and returns the input gradient.
  virtual FeatureMaps<Scalar> backward(const FeatureMaps<Scalar>& grad) = 0;

  virtual void init(Rng& rng) {}
  virtual void parameters(std::vector<Parameter<Scalar>*>& out) {}
  virtual void buffers(std::vector<Buffer<Scalar>>& out) {}
  /// The first layer of a network can skip the input gradient.
  virtual void set_input_grad(bool enabled) {}

 protected:
  std::string name_;
};

/// U(-b, b) with b = sqrt(6 / fan_in).
template <typename Scalar>
void he_uniform(Mat<Scalar>& w, Index fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index j = 0; j < w.cols(); ++j)
    for (Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(dist(rng));
}

struct Conv2dOptions {
  Index in_channels = 1;
  Index out_channels = 1;
  Index kernel_h = 1;
  Index kernel_w = 1;
  Index stride_h = 1;
  Index stride_w = 1;
  Index pad_h = 0;
  Index pad_w = 0;
  bool bias = false;
};

/// 2-D convolution as im2col + one GEMM over the whole batch. Weight layout is
/// [out x (kernel_h * kernel_w * in)], row-block (ky * kernel_w + kx) * in.
template <typename Scalar>
class Conv2d : public Layer<Scalar> {
 public:
  Conv2d(std::string name, const Conv2dOptions& o)
      : Layer<Scalar>(std::move(name)),
        o_(o),
        weight_(this->name_ + ".weight", o.out_channels, o.kernel_h * o.kernel_w * o.in_channels),
        bias_(this->name_ + ".bias", o.out_channels, 1) {}

  const Conv2dOptions& options() const { return o_; }
  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }

  Shape output_shape(const Shape& in) const override {
    if (in.channels != o_.in_channels) {
      throw Error(this->name_ + ": expected " + std::to_string(o_.in_channels) + " input channels, got " +
                  std::to_string(in.channels));
    }
    if (in.height + 2 * o_.pad_h < o_.kernel_h || in.width + 2 * o_.pad_w < o_.kernel_w) {
      throw Error(this->name_ + ": kernel " + std::to_string(o_.kernel_h) + "x" +
                  std::to_string(o_.kernel_w) + " does not fit input extent " +
                  std::to_string(in.height) + "x" + std::to_string(in.width));
    }
    return {o_.out_channels, (in.height + 2 * o_.pad_h - o_.kernel_h) / o_.stride_h + 1,
            (in.width + 2 * o_.pad_w - o_.kernel_w) / o_.stride_w + 1};
  }

  FeatureMaps<Scalar> forward(const FeatureMaps<Scalar>& x, Mode mode) override {
    in_shape_ = {x.channels(), x.height, x.width};
    batch_ = x.batch;
    return run(x, &cols_);
  }

  FeatureMaps<Scalar> infer(const FeatureMaps<Scalar>& x) const override { return run(x, nullptr); }

  FeatureMaps<Scalar> backward(const FeatureMaps<Scalar>& g) override {
    weight_.grad.noalias() += g.data * cols_.transpose();
    if (o_.bias) bias_.grad += g.data.rowwise().sum();
    FeatureMaps<Scalar> dx(in_shape_.channels, batch_, in_shape_.height, in_shape_.width);
    if (!input_grad_) {
      dx.data.setZero();
      return dx;
    }
    const Mat<Scalar> dcols = weight_.value.transpose() * g.data;
    col2im(dcols, g.height, g.width, dx);
    return dx;
  }

  void init(Rng& rng) override {
    he_uniform(weight_.value, o_.kernel_h * o_.kernel_w * o_.in_channels, rng);
    bias_.value.setZero();
  }

  void parameters(std::vector<Parameter<Scalar>*>& out) override {
    out.push_back(&weight_);
    if (o_.bias) out.push_back(&bias_);
  }

  void set_input_grad(bool enabled) override { input_grad_ = enabled; }

 private:
  FeatureMaps<Scalar> run(const FeatureMaps<Scalar>& x, Mat<Scalar>* cache) const {
    const Shape out_shape = output_shape({x.channels(), x.height, x.width});
    Mat<Scalar> local;
    Mat<Scalar>& cols = cache ? *cache : local;
    im2col(x, out_shape.height, out_shape.width, cols);
    FeatureMaps<Scalar> y(o_.out_channels, x.batch, out_shape.height, out_shape.width);
    y.data.noalias() = weight_.value * cols;
    if (o_.bias) y.data.colwise() += bias_.value.col(0);
    return y;
  }

  void im2col(const FeatureMaps<Scalar>& x, Index ho, Index wo, Mat<Scalar>& cols) const {
    const Index c = x.channels();
    cols.resize(o_.kernel_h * o_.kernel_w * c, x.batch * ho * wo);
    for (Index n = 0; n < x.batch; ++n) {
      for (Index oy = 0; oy < ho; ++oy) {
        for (Index ox = 0; ox < wo; ++ox) {
          const Index col = (n * ho + oy) * wo + ox;
          for (Index ky = 0; ky < o_.kernel_h; ++ky) {
            const Index iy = oy * o_.stride_h - o_.pad_h + ky;
            for (Index kx = 0; kx < o_.kernel_w; ++kx) {
              const Index ix = ox * o_.stride_w - o_.pad_w + kx;
              const Index row = (ky * o_.kernel_w + kx) * c;
              if (iy < 0 || iy >= x.height || ix < 0 || ix >= x.width) {
                cols.col(col).segment(row, c).setZero();
              } else {
                cols.col(col).segment(row, c) = x.data.col(x.column(n, iy, ix));
              }
            }
          }
        }
      }
    }
  }

  void col2im(const Mat<Scalar>& dcols, Index ho, Index wo, FeatureMaps<Scalar>& dx) const {
    const Index c = dx.channels();
    dx.data.setZero();
    for (Index n = 0; n < dx.batch; ++n) {
      for (Index oy = 0; oy < ho; ++oy) {
        for (Index ox = 0; ox < wo; ++ox) {
          const Index col = (n * ho + oy) * wo + ox;
          for (Index ky = 0; ky < o_.kernel_h; ++ky) {
            const Index iy = oy * o_.stride_h - o_.pad_h + ky;
            if (iy < 0 || iy >= dx.height) continue;
            for (Index kx = 0; kx < o_.kernel_w; ++kx) {
              const Index ix = ox * o_.stride_w - o_.pad_w + kx;
              if (ix < 0 || ix >= dx.width) continue;
              dx.data.col(dx.column(n, iy, ix)) += dcols.col(col).segment((ky * o_.kernel_w + kx) * c, c);
            }
          }
        }
      }
    }
  }

  Conv2dOptions o_;
  Parameter<Scalar> weight_;
  Parameter<Scalar> bias_;
  Mat<Scalar> cols_;
  Shape in_shape_;
  Index batch_ = 0;
  bool input_grad_ = true;
};

struct PoolOptions {
  Index kernel_h = 3;
  Index kernel_w = 3;
  Index stride_h = 1;
  Index stride_w = 1;
  Index pad_h = 0;
  Index pad_w = 0;
};

/// Max pooling; padded cells never win.
template <typename Scalar>
class MaxPool2d : public Layer<Scalar> {
 public:
  MaxPool2d(std::string name, const PoolOptions& o) : Layer<Scalar>(std::move(name)), o_(o) {}

  Shape output_shape(const Shape& in) const override {
    if (o_.pad_h >= o_.kernel_h || o_.pad_w >= o_.kernel_w) {
      throw Error(this->name_ + ": padding must be smaller than the kernel");
    }
    if (in.height + 2 * o_.pad_h < o_.kernel_h || in.width + 2 * o_.pad_w < o_.kernel_w) {
      throw Error(this->name_ + ": pooling window does not fit input extent " +
                  std::to_string(in.height) + "x" + std::to_string(in.width));
    }
    return {in.channels, (in.height + 2 * o_.pad_h - o_.kernel_h) / o_.stride_h + 1,
            (in.width + 2 * o_.pad_w - o_.kernel_w) / o_.stride_w + 1};
  }

  FeatureMaps<Scalar> forward(const FeatureMaps<Scalar>& x, Mode mode) override {
    in_shape_ = {x.channels(), x.height, x.width};
    batch_ = x.batch;
    return run(x, &argmax_);
  }

  FeatureMaps<Scalar> infer(const FeatureMaps<Scalar>& x) const override { return run(x, nullptr); }

  FeatureMaps<Scalar> backward(const FeatureMaps<Scalar>& g) override {
    FeatureMaps<Scalar> dx(in_shape_.channels, batch_, in_shape_.height, in_shape_.width);
    dx.data.setZero();
    for (Index col = 0; col < g.data.cols(); ++col) {
      for (Index c = 0; c < g.data.rows(); ++c) dx.data(c, argmax_(c, col)) += g.data(c, col);
    }
    return dx;
  }

 private:
  using IndexMat = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic>;

  FeatureMaps<Scalar> run(const FeatureMaps<Scalar>& x, IndexMat* argmax) const {
    const Shape s = output_shape({x.channels(), x.height, x.width});
    const Index c = s.channels;
    FeatureMaps<Scalar> y(c, x.batch, s.height, s.width);
    y.data.setConstant(-std::numeric_limits<Scalar>::infinity());
    if (argmax) argmax->setZero(c, y.data.cols());
    for (Index n = 0; n < x.batch; ++n) {
      for (Index oy = 0; oy < s.height; ++oy) {
        for (Index ox = 0; ox < s.width; ++ox) {
          const Index col = (n * s.height + oy) * s.width + ox;
          Scalar* best = y.data.data() + col * c;
          Index* arg = argmax ? argmax->data() + col * c : nullptr;
          for (Index ky = 0; ky < o_.kernel_h; ++ky) {
            const Index iy = oy * o_.stride_h - o_.pad_h + ky;
            if (iy < 0 || iy >= x.height) continue;
            for (Index kx = 0; kx < o_.kernel_w; ++kx) {
              const Index ix = ox * o_.stride_w - o_.pad_w + kx;
              if (ix < 0 || ix >= x.width) continue;
              const Index src = x.column(n, iy, ix);
              const Scalar* v = x.data.data() + src * c;
              if (arg) {
                for (Index ch = 0; ch < c; ++ch) {
                  if (v[ch] > best[ch]) {
                    best[ch] = v[ch];
                    arg[ch] = src;
                  }
                }
              } else {
                for (Index ch = 0; ch < c; ++ch) best[ch] = std::max(best[ch], v[ch]);
              }
            }
          }
        }
      }
    }
    return y;
  }

  PoolOptions o_;
  IndexMat argmax_;
  Shape in_shape_;
  Index batch_ = 0;
};

/// Per-channel batch normalisation over every (sample, position) column.
/// Running statistics use momentum 0.1 and the unbiased batch variance.
template <typename Scalar>
class BatchNorm : public Layer<Scalar> {
 public:
  BatchNorm(std::string name, Index channels, double eps = 1e-5, double momentum = 0.1)
      : Layer<Scalar>(std::move(name)),
        eps_(eps),
        momentum_(momentum),
        gamma_(this->name_ + ".weight", channels, 1),
        beta_(this->name_ + ".bias", channels, 1),
        running_mean_(Mat<Scalar>::Zero(channels, 1)),
        running_var_(Mat<Scalar>::Ones(channels, 1)) {
    gamma_.value.setOnes();
  }

  Parameter<Scalar>& gamma() { return gamma_; }
  Parameter<Scalar>& beta() { return beta_; }
  Mat<Scalar>& running_mean() { return running_mean_; }
  Mat<Scalar>& running_var() { return running_var_; }

  Shape output_shape(const Shape& in) const override {
    if (in.channels != gamma_.value.rows()) {
      throw Error(this->name_ + ": expected " + std::to_string(gamma_.value.rows()) +
                  " channels, got " + std::to_string(in.channels));
    }
    return in;
  }

  FeatureMaps<Scalar> forward(const FeatureMaps<Scalar>& x, Mode mode) override {
    output_shape({x.channels(), x.height, x.width});
    batch_stats_ = mode.train;
    if (!mode.train) {
      invstd_ = (running_var_.array() + static_cast<Scalar>(eps_)).rsqrt().matrix();
      xhat_ = invstd_.col(0).asDiagonal() * (x.data.colwise() - running_mean_.col(0));
      FeatureMaps<Scalar> y(x.channels(), x.batch, x.height, x.width);
      y.data = gamma_.value.col(0).asDiagonal() * xhat_;
      y.data.colwise() += beta_.value.col(0);
      return y;
    }
    const Index m = x.data.cols();
    const Vec<Scalar> mean = x.data.rowwise().mean();
    xhat_ = x.data.colwise() - mean;
    const Vec<Scalar> var = xhat_.rowwise().squaredNorm() / static_cast<Scalar>(m);
    invstd_ = (var.array() + static_cast<Scalar>(eps_)).rsqrt().matrix();
    xhat_ = invstd_.col(0).asDiagonal() * xhat_;
    if (mode.update_stats) {
      const Scalar mom = static_cast<Scalar>(momentum_);
      const Scalar unbias = m > 1 ? static_cast<Scalar>(m) / static_cast<Scalar>(m - 1) : Scalar(1);
      running_mean_ = (Scalar(1) - mom) * running_mean_ + mom * mean;
      running_var_ = (Scalar(1) - mom) * running_var_ + mom * unbias * var;
    }
    FeatureMaps<Scalar> y(x.channels(), x.batch, x.height, x.width);
    y.data = gamma_.value.col(0).asDiagonal() * xhat_;
    y.data.colwise() += beta_.value.col(0);
    return y;
  }

  FeatureMaps<Scalar> infer(const FeatureMaps<Scalar>& x) const override {
    output_shape({x.channels(), x.height, x.width});
    const Mat<Scalar> invstd = (running_var_.array() + static_cast<Scalar>(eps_)).rsqrt().matrix();
    return affine(x, running_mean_, invstd);
  }

  FeatureMaps<Scalar> backward(const FeatureMaps<Scalar>& g) override {
    FeatureMaps<Scalar> dx(g.channels(), g.batch, g.height, g.width);
    if (!batch_stats_) {
      // Frozen statistics: y = gamma * (x - mean) * invstd + beta.
      gamma_.grad += (g.data.cwiseProduct(xhat_)).rowwise().sum();
      beta_.grad += g.data.rowwise().sum();
      dx.data = (gamma_.value.cwiseProduct(invstd_)).col(0).asDiagonal() * g.data;
      return dx;
    }
    const Index m = g.data.cols();
    const Vec<Scalar> sum_g = g.data.rowwise().sum();
    const Vec<Scalar> sum_gx = g.data.cwiseProduct(xhat_).rowwise().sum();
    gamma_.grad += sum_gx;
    beta_.grad += sum_g;
    const Scalar inv_m = Scalar(1) / static_cast<Scalar>(m);
    dx.data = (g.data * static_cast<Scalar>(m)).colwise() - sum_g;
    dx.data -= sum_gx.asDiagonal() * xhat_;
    const Vec<Scalar> scale = gamma_.value.col(0).cwiseProduct(invstd_.col(0)) * inv_m;
    dx.data = scale.asDiagonal() * dx.data;
    return dx;
  }

  void init(Rng&) override {
    gamma_.value.setOnes();
    beta_.value.setZero();
    running_mean_.setZero();
    running_var_.setOnes();
  }

  void parameters(std::vector<Parameter<Scalar>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }

  void buffers(std::vector<Buffer<Scalar>>& out) override {
    out.push_back({this->name_ + ".running_mean", &running_mean_});
    out.push_back({this->name_ + ".running_var", &running_var_});
  }

 private:
  FeatureMaps<Scalar> affine(const FeatureMaps<Scalar>& x, const Mat<Scalar>& mean,
                             const Mat<Scalar>& invstd) const {
    FeatureMaps<Scalar> y(x.channels(), x.batch, x.height, x.width);
    y.data = x.data.colwise() - mean.col(0);
    y.data = (gamma_.value.cwiseProduct(invstd)).col(0).asDiagonal() * y.data;
    y.data.colwise() += beta_.value.col(0);
    return y;
  }

  double eps_;
  double momentum_;
  Parameter<Scalar> gamma_;
  Parameter<Scalar> beta_;
  Mat<Scalar> running_mean_;
  Mat<Scalar> running_var_;
  Mat<Scalar> xhat_;
  Mat<Scalar> invstd_;
  bool batch_stats_ = true;
};

template <typename Scalar>
class ReLU : public Layer<Scalar> {
 public:
  explicit ReLU(std::string name) : Layer<Scalar>(std::move(name)) {}

  Shape output_shape(const Shape& in) const override { return in; }

  FeatureMaps<Scalar> forward(const FeatureMaps<Scalar>& x, Mode mode) override {
    FeatureMaps<Scalar> y = infer(x);
    out_ = y.data;
    return y;
  }

  FeatureMaps<Scalar> infer(const FeatureMaps<Scalar>& x) const override {
    FeatureMaps<Scalar> y = x;
    y.data = x.data.cwiseMax(Scalar(0));
    return y;
  }

  FeatureMaps<Scalar> backward(const FeatureMaps<Scalar>& g) override {
    FeatureMaps<Scalar> dx = g;
    dx.data = (out_.array() > Scalar(0)).select(g.data, Scalar(0));
    return dx;
  }

 private:
  Mat<Scalar> out_;
};

/// Affine map applied to every column: y = W x + b, W is [out x in].
template <typename Scalar>
class Linear : public Layer<Scalar> {
 public:
  Linear(std::string name, Index in, Index out)
      : Layer<Scalar>(std::move(name)),
        weight_(this->name_ + ".weight", out, in),
        bias_(this->name_ + ".bias", out, 1) {}

  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }
  const Parameter<Scalar>& weight() const { return weight_; }
  const Parameter<Scalar>& bias() const { return bias_; }

  Shape output_shape(const Shape& in) const override {
    if (in.channels != weight_.value.cols()) {
      throw Error(this->name_ + ": expected input dimension " + std::to_string(weight_.value.cols()) +
                  ", got " + std::to_string(in.channels));
    }
    return {weight_.value.rows(), in.height, in.width};
  }

  FeatureMaps<Scalar> forward(const FeatureMaps<Scalar>& x, Mode mode) override {
    in_ = x;
    return infer(x);
  }

  FeatureMaps<Scalar> infer(const FeatureMaps<Scalar>& x) const override {
    const Shape s = output_shape({x.channels(), x.height, x.width});
    FeatureMaps<Scalar> y(s.channels, x.batch, x.height, x.width);
    y.data.noalias() = weight_.value * x.data;
    y.data.colwise() += bias_.value.col(0);
    return y;
  }

  FeatureMaps<Scalar> backward(const FeatureMaps<Scalar>& g) override {
    weight_.grad.noalias() += g.data * in_.data.transpose();
    bias_.grad += g.data.rowwise().sum();
    FeatureMaps<Scalar> dx(in_.channels(), in_.batch, in_.height, in_.width);
    dx.data.noalias() = weight_.value.transpose() * g.data;
    return dx;
  }

  void init(Rng& rng) override {
    he_uniform(weight_.value, weight_.value.cols(), rng);
    bias_.value.setZero();
  }

  void parameters(std::vector<Parameter<Scalar>*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  Parameter<Scalar> weight_;
  Parameter<Scalar> bias_;
  FeatureMaps<Scalar> in_;
};

/// Owning chain of layers.
template <typename Scalar>
class Sequential : public Layer<Scalar> {
 public:
  explicit Sequential(std::string name) : Layer<Scalar>(std::move(name)) {}

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  std::size_t size() const { return layers_.size(); }
  Layer<Scalar>& operator[](std::size_t i) { return *layers_[i]; }
  const Layer<Scalar>& operator[](std::size_t i) const { return *layers_[i]; }

  Shape output_shape(const Shape& in) const override {
    Shape s = in;
    for (const auto& l : layers_) s = l->output_shape(s);
    return s;
  }

  FeatureMaps<Scalar> forward(const FeatureMaps<Scalar>& x, Mode mode) override {
    if (layers_.empty()) return x;
    FeatureMaps<Scalar> h = layers_.front()->forward(x, mode);
    for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i]->forward(h, mode);
    return h;
  }

  FeatureMaps<Scalar> infer(const FeatureMaps<Scalar>& x) const override {
    if (layers_.empty()) return x;
    FeatureMaps<Scalar> h = layers_.front()->infer(x);
    for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i]->infer(h);
    return h;
  }

  FeatureMaps<Scalar> backward(const FeatureMaps<Scalar>& g) override {
    FeatureMaps<Scalar> d = g;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) d = (*it)->backward(d);
    return d;
  }

  void init(Rng& rng) override {
    for (auto& l : layers_) l->init(rng);
  }
  void parameters(std::vector<Parameter<Scalar>*>& out) override {
    for (auto& l : layers_) l->parameters(out);
  }
  void buffers(std::vector<Buffer<Scalar>>& out) override {
    for (auto& l : layers_) l->buffers(out);
  }
  void set_input_grad(bool enabled) override {
    if (!layers_.empty()) layers_.front()->set_input_grad(enabled);
  }

 private:
  std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
};

/// conv-bn-relu-conv-bn plus identity (or 1x1 projection) shortcut, then ReLU.
template <typename Scalar>
class BasicBlock : public Layer<Scalar> {
 public:
  BasicBlock(std::string name, Index in, Index out, Index stride)
      : Layer<Scalar>(name),
        conv1_(name + ".conv1", {in, out, 3, 3, stride, stride, 1, 1, false}),
        bn1_(name + ".bn1", out),
        relu1_(name + ".relu1"),
        conv2_(name + ".conv2", {out, out, 3, 3, 1, 1, 1, 1, false}),
        bn2_(name + ".bn2", out),
        relu_out_(name + ".relu2") {
    if (stride != 1 || in != out) {
      proj_ = std::make_unique<Conv2d<Scalar>>(name + ".downsample.conv",
                                               Conv2dOptions{in, out, 1, 1, stride, stride, 0, 0, false});
      proj_bn_ = std::make_unique<BatchNorm<Scalar>>(name + ".downsample.bn", out);
    }
  }

  Shape output_shape(const Shape& in) const override {
    Shape main = bn2_.output_shape(conv2_.output_shape(conv1_.output_shape(in)));
    if (proj_) {
      const Shape skip = proj_->output_shape(in);
      if (!(skip == main)) throw Error(this->name_ + ": shortcut shape mismatch");
    } else if (!(in == main)) {
      throw Error(this->name_ + ": identity shortcut shape mismatch");
    }
    return main;
  }

  FeatureMaps<Scalar> forward(const FeatureMaps<Scalar>& x, Mode mode) override {
    FeatureMaps<Scalar> h = relu1_.forward(bn1_.forward(conv1_.forward(x, mode), mode), mode);
    h = bn2_.forward(conv2_.forward(h, mode), mode);
    if (proj_) {
      h.data += proj_bn_->forward(proj_->forward(x, mode), mode).data;
    } else {
      h.data += x.data;
    }
    return relu_out_.forward(h, mode);
  }

  FeatureMaps<Scalar> infer(const FeatureMaps<Scalar>& x) const override {
    FeatureMaps<Scalar> h = relu1_.infer(bn1_.infer(conv1_.infer(x)));
    h = bn2_.infer(conv2_.infer(h));
    if (proj_) {
      h.data += proj_bn_->infer(proj_->infer(x)).data;
    } else {
      h.data += x.data;
    }
    return relu_out_.infer(h);
  }

  FeatureMaps<Scalar> backward(const FeatureMaps<Scalar>& g) override {
    const FeatureMaps<Scalar> d = relu_out_.backward(g);
    FeatureMaps<Scalar> dx = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(d)))));
    if (proj_) {
      dx.data += proj_->backward(proj_bn_->backward(d)).data;
    } else {
      dx.data += d.data;
    }
    return dx;
  }

  void init(Rng& rng) override {
    conv1_.init(rng);
    bn1_.init(rng);
    conv2_.init(rng);
    bn2_.init(rng);
    if (proj_) {
      proj_->init(rng);
      proj_bn_->init(rng);
    }
  }

  void parameters(std::vector<Parameter<Scalar>*>& out) override {
    conv1_.parameters(out);
    bn1_.parameters(out);
    conv2_.parameters(out);
    bn2_.parameters(out);
    if (proj_) {
      proj_->parameters(out);
      proj_bn_->parameters(out);
    }
  }

  void buffers(std::vector<Buffer<Scalar>>& out) override {
    bn1_.buffers(out);
    bn2_.buffers(out);
    if (proj_bn_) proj_bn_->buffers(out);
  }

 private:
  Conv2d<Scalar> conv1_;
  BatchNorm<Scalar> bn1_;
  ReLU<Scalar> relu1_;
  Conv2d<Scalar> conv2_;
  BatchNorm<Scalar> bn2_;
  ReLU<Scalar> relu_out_;
  std::unique_ptr<Conv2d<Scalar>> proj_;
  std::unique_ptr<BatchNorm<Scalar>> proj_bn_;
};

}  // namespace envadv::nn

#endif  // ENVADV_NN_LAYERS_HPP_
