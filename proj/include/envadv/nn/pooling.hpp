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

#ifndef ENVADV_NN_POOLING_HPP_
#define ENVADV_NN_POOLING_HPP_

#include "envadv/nn/layers.hpp"

namespace envadv::nn {

namespace detail {
inline void require_frame_sequence(const std::string& who, Index height, Index width) {
  if (height != 1) {
    throw Error(who + ": expected a 1 x T map, got frequency extent " + std::to_string(height));
  }
  if (width < 1) throw Error(who + ": empty time axis");
}
}  // namespace detail

/// Temporal average pooling: [D x (N*T)] frame features -> [D x N].
template <typename Scalar>
Mat<Scalar> pool_tap(const FeatureMaps<Scalar>& frames) {
  detail::require_frame_sequence("pool_tap", frames.height, frames.width);
  const Index t = frames.width;
  Mat<Scalar> out(frames.channels(), frames.batch);
  for (Index n = 0; n < frames.batch; ++n) {
    out.col(n) = frames.data.middleCols(n * t, t).rowwise().mean();
  }
  return out;
}

/// Self-attentive pooling parameters: h_t = tanh(W x_t + b), w = softmax(h^T mu).
template <typename Scalar>
struct SapParams {
  Mat<Scalar> W;   // [H x D]
  Vec<Scalar> b;   // [H]
  Vec<Scalar> mu;  // [H]
};

/// Attention weights of every frame, [T x N]; each column sums to one.
template <typename Scalar>
Mat<Scalar> sap_weights(const FeatureMaps<Scalar>& frames, const SapParams<Scalar>& p,
                        Mat<Scalar>* hidden = nullptr) {
  detail::require_frame_sequence("pool_sap", frames.height, frames.width);
  if (p.W.cols() != frames.channels() || p.W.rows() != p.b.size() || p.mu.size() != p.b.size()) {
    throw Error("pool_sap: parameter shapes do not match a " + std::to_string(frames.channels()) +
                "-dimensional input");
  }
  const Index t = frames.width;
  Mat<Scalar> h = p.W * frames.data;
  h.colwise() += p.b;
  h = h.array().tanh().matrix();
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> scores = p.mu.transpose() * h;
  Mat<Scalar> w(t, frames.batch);
  for (Index n = 0; n < frames.batch; ++n) {
    const auto s = scores.segment(n * t, t).transpose();
    const Scalar top = s.maxCoeff();
    w.col(n) = (s.array() - top).exp().matrix();
    w.col(n) /= w.col(n).sum();
  }
  if (hidden) *hidden = std::move(h);
  return w;
}

template <typename Scalar>
Mat<Scalar> pool_sap(const FeatureMaps<Scalar>& frames, const SapParams<Scalar>& p) {
  const Mat<Scalar> w = sap_weights(frames, p);
  const Index t = frames.width;
  Mat<Scalar> out(frames.channels(), frames.batch);
  for (Index n = 0; n < frames.batch; ++n) out.col(n) = frames.data.middleCols(n * t, t) * w.col(n);
  return out;
}

template <typename Scalar>
class TemporalAveragePool : public Layer<Scalar> {
 public:
  explicit TemporalAveragePool(std::string name) : Layer<Scalar>(std::move(name)) {}

  Shape output_shape(const Shape& in) const override {
    detail::require_frame_sequence(this->name_, in.height, in.width);
    return {in.channels, 1, 1};
  }

  FeatureMaps<Scalar> forward(const FeatureMaps<Scalar>& x, Mode mode) override {
    width_ = x.width;
    return infer(x);
  }

  FeatureMaps<Scalar> infer(const FeatureMaps<Scalar>& x) const override {
    return FeatureMaps<Scalar>::vectors(pool_tap(x));
  }

  FeatureMaps<Scalar> backward(const FeatureMaps<Scalar>& g) override {
    FeatureMaps<Scalar> dx(g.channels(), g.batch, 1, width_);
    const Scalar inv = Scalar(1) / static_cast<Scalar>(width_);
    for (Index n = 0; n < g.batch; ++n) dx.data.middleCols(n * width_, width_).colwise() = g.data.col(n) * inv;
    return dx;
  }

 private:
  Index width_ = 0;
};

template <typename Scalar>
class SelfAttentivePool : public Layer<Scalar> {
 public:
  SelfAttentivePool(std::string name, Index dim, Index hidden)
      : Layer<Scalar>(name),
        W_(name + ".W", hidden, dim),
        b_(name + ".b", hidden, 1),
        mu_(name + ".mu", hidden, 1) {}

  Parameter<Scalar>& W() { return W_; }
  Parameter<Scalar>& b() { return b_; }
  Parameter<Scalar>& mu() { return mu_; }

  SapParams<Scalar> params() const { return {W_.value, b_.value.col(0), mu_.value.col(0)}; }

  /// Attention weights from the last forward(), [T x N].
  const Mat<Scalar>& last_weights() const { return weights_; }

  Shape output_shape(const Shape& in) const override {
    detail::require_frame_sequence(this->name_, in.height, in.width);
    if (in.channels != W_.value.cols()) {
      throw Error(this->name_ + ": expected " + std::to_string(W_.value.cols()) + " channels");
    }
    return {in.channels, 1, 1};
  }

  FeatureMaps<Scalar> forward(const FeatureMaps<Scalar>& x, Mode mode) override {
    x_ = x;
    weights_ = sap_weights(x, params(), &hidden_);
    return FeatureMaps<Scalar>::vectors(combine(x, weights_));
  }

  FeatureMaps<Scalar> infer(const FeatureMaps<Scalar>& x) const override {
    return FeatureMaps<Scalar>::vectors(pool_sap(x, params()));
  }

  FeatureMaps<Scalar> backward(const FeatureMaps<Scalar>& g) override {
    const Index t = x_.width;
    FeatureMaps<Scalar> dx(x_.channels(), x_.batch, 1, t);
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> dscore(x_.data.cols());
    for (Index n = 0; n < x_.batch; ++n) {
      const auto xn = x_.data.middleCols(n * t, t);
      const auto wn = weights_.col(n);
      dx.data.middleCols(n * t, t).noalias() = g.data.col(n) * wn.transpose();
      const Vec<Scalar> dw = xn.transpose() * g.data.col(n);
      const Scalar mean = wn.dot(dw);
      dscore.segment(n * t, t) = (wn.array() * (dw.array() - mean)).matrix().transpose();
    }
    mu_.grad.col(0).noalias() += hidden_ * dscore.transpose();
    const Mat<Scalar> dpre = ((mu_.value.col(0) * dscore).array() * (Scalar(1) - hidden_.array().square())).matrix();
    W_.grad.noalias() += dpre * x_.data.transpose();
    b_.grad += dpre.rowwise().sum();
    dx.data.noalias() += W_.value.transpose() * dpre;
    return dx;
  }

  void init(Rng& rng) override {
    he_uniform(W_.value, W_.value.cols(), rng);
    b_.value.setZero();
    he_uniform(mu_.value, mu_.value.rows(), rng);
  }

  void parameters(std::vector<Parameter<Scalar>*>& out) override {
    out.push_back(&W_);
    out.push_back(&b_);
    out.push_back(&mu_);
  }

 private:
  static Mat<Scalar> combine(const FeatureMaps<Scalar>& x, const Mat<Scalar>& w) {
    const Index t = x.width;
    Mat<Scalar> out(x.channels(), x.batch);
    for (Index n = 0; n < x.batch; ++n) out.col(n) = x.data.middleCols(n * t, t) * w.col(n);
    return out;
  }

  Parameter<Scalar> W_;
  Parameter<Scalar> b_;
  Parameter<Scalar> mu_;
  FeatureMaps<Scalar> x_;
  Mat<Scalar> weights_;
  Mat<Scalar> hidden_;
};

}  // namespace envadv::nn

#endif  // ENVADV_NN_POOLING_HPP_
