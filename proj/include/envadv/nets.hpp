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

#ifndef ENVADV_NETS_HPP_
#define ENVADV_NETS_HPP_

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "envadv/dsp.hpp"
#include "envadv/nn/layers.hpp"
#include "envadv/nn/pooling.hpp"

namespace envadv {

enum class Arch { vggm40, thin_resnet34 };
enum class PoolKind { tap, sap };
/// Layer order inside each environment-network stage.
enum class EnvNetOrder { bn_relu_fc, relu_bn_fc };

std::string_view to_string(Arch arch);
std::string_view to_string(PoolKind pool);
std::string_view to_string(EnvNetOrder order);
Arch parse_arch(std::string_view text);
PoolKind parse_pool(std::string_view text);
EnvNetOrder parse_env_order(std::string_view text);

struct TrunkConfig {
  Arch arch = Arch::vggm40;
  PoolKind pool = PoolKind::tap;
  int embed_dim = 512;
  int n_speakers = 1211;
  /// Multiplier on every convolutional channel count (0.5 = half width).
  double width = 1.0;
  int sap_hidden = 512;
  int env_dim = 512;
  EnvNetOrder env_order = EnvNetOrder::bn_relu_fc;

  FeatureKind feature_kind() const {
    return arch == Arch::vggm40 ? FeatureKind::fbank40 : FeatureKind::spectrogram257;
  }
  int feature_bins() const { return arch == Arch::vggm40 ? 40 : 257; }
  /// Frequency extent the fc layer's kernel spans.
  int fc_kernel_height() const { return arch == Arch::vggm40 ? 4 : 9; }

  friend bool operator==(const TrunkConfig&, const TrunkConfig&) = default;
};

namespace detail {
inline nn::Index scaled(int channels, double width) {
  return std::max<nn::Index>(1, static_cast<nn::Index>(std::lround(channels * width)));
}
}  // namespace detail

/// Convolutional stack up to (not including) the frequency-collapsing fc.
template <typename Scalar>
std::unique_ptr<nn::Sequential<Scalar>> build_trunk_body(const TrunkConfig& cfg) {
  using namespace nn;
  auto body = std::make_unique<Sequential<Scalar>>("trunk");
  auto conv_bn_relu = [&](const std::string& name, const Conv2dOptions& o) {
    body->template add<Conv2d<Scalar>>(name, o);
    body->template add<BatchNorm<Scalar>>(name + ".bn", o.out_channels);
    body->template add<ReLU<Scalar>>(name + ".relu");
  };
  if (cfg.arch == Arch::vggm40) {
    const Index c1 = envadv::detail::scaled(96, cfg.width);
    const Index c3 = envadv::detail::scaled(256, cfg.width);
    // Frequency extent for a 40-bin input: 40 -> 20 -> 20 -> 10 -> 5 -> 7 -> 7 -> 7 -> 4.
    conv_bn_relu("trunk.conv1", {1, c1, 5, 7, 2, 2, 2, 3, false});
    body->template add<MaxPool2d<Scalar>>("trunk.pool1", PoolOptions{3, 3, 1, 2, 1, 1});
    conv_bn_relu("trunk.conv2", {c1, c1, 5, 5, 2, 2, 2, 2, false});
    body->template add<MaxPool2d<Scalar>>("trunk.pool2", PoolOptions{3, 3, 2, 2, 1, 1});
    conv_bn_relu("trunk.conv3", {c1, c3, 3, 3, 1, 1, 2, 1, false});
    conv_bn_relu("trunk.conv4", {c3, c3, 3, 3, 1, 1, 1, 1, false});
    conv_bn_relu("trunk.conv5", {c3, c3, 3, 3, 1, 1, 1, 1, false});
    body->template add<MaxPool2d<Scalar>>("trunk.pool5", PoolOptions{3, 3, 2, 2, 1, 1});
  } else {
    const Index base = envadv::detail::scaled(16, cfg.width);
    // Frequency extent for a 257-bin input: 257 -> 129 -> 65 -> 65 -> 33 -> 17 -> 9.
    conv_bn_relu("trunk.conv1", {1, base, 7, 7, 2, 2, 3, 3, false});
    body->template add<MaxPool2d<Scalar>>("trunk.pool1", PoolOptions{3, 3, 2, 2, 1, 1});
    const int blocks[4] = {3, 4, 6, 3};
    Index in = base;
    for (int stage = 0; stage < 4; ++stage) {
      const Index out = base << stage;
      for (int b = 0; b < blocks[stage]; ++b) {
        const Index stride = (stage > 0 && b == 0) ? 2 : 1;
        body->template add<BasicBlock<Scalar>>(
            "trunk.layer" + std::to_string(stage + 1) + "." + std::to_string(b), in, out, stride);
        in = out;
      }
    }
  }
  return body;
}

template <typename Scalar>
nn::Index trunk_body_channels(const TrunkConfig& cfg) {
  return cfg.arch == Arch::vggm40 ? envadv::detail::scaled(256, cfg.width) : envadv::detail::scaled(16, cfg.width) * 8;
}

/// Pack [F x T] segments into a single-channel batch.
template <typename Scalar>
nn::FeatureMaps<Scalar> pack_segments(const std::vector<FeatureSegment<Scalar>>& segments) {
  if (segments.empty()) throw Error("pack_segments: empty batch");
  const auto f = segments.front().bins();
  const auto t = segments.front().frames();
  nn::FeatureMaps<Scalar> x(1, static_cast<nn::Index>(segments.size()), f, t);
  for (std::size_t n = 0; n < segments.size(); ++n) {
    const auto& v = segments[n].values;
    if (v.rows() != f || v.cols() != t) throw Error("pack_segments: segments differ in shape");
    for (nn::Index r = 0; r < f; ++r) {
      x.data.block(0, x.column(static_cast<nn::Index>(n), r, 0), 1, t) = v.row(r);
    }
  }
  return x;
}

/// Trunk, temporal pooling, speaker classifier, environment network and the
/// optional verification head. Parameter groups are kept separate so each
/// training phase can update exactly the modules it owns.
template <typename Scalar>
class SpeakerNet {
 public:
  using Maps = nn::FeatureMaps<Scalar>;
  using Matrix = nn::Mat<Scalar>;

  explicit SpeakerNet(const TrunkConfig& cfg) : cfg_(cfg) {
    if (cfg.n_speakers < 1) throw Error("SpeakerNet: n_speakers must be positive");
    body_ = build_trunk_body<Scalar>(cfg);
    const nn::Index channels = trunk_body_channels<Scalar>(cfg);
    fc_ = std::make_unique<nn::Sequential<Scalar>>("trunk.fc");
    fc_->template add<nn::Conv2d<Scalar>>(
        "trunk.fc", nn::Conv2dOptions{channels, cfg.embed_dim, cfg.fc_kernel_height(), 1, 1, 1, 0, 0, false});
    fc_->template add<nn::BatchNorm<Scalar>>("trunk.fc.bn", cfg.embed_dim);
    fc_->template add<nn::ReLU<Scalar>>("trunk.fc.relu");
    if (cfg.pool == PoolKind::tap) {
      pool_ = std::make_unique<nn::TemporalAveragePool<Scalar>>("pool");
    } else {
      pool_ = std::make_unique<nn::SelfAttentivePool<Scalar>>("pool", cfg.embed_dim, cfg.sap_hidden);
    }
    head_ = std::make_unique<nn::Linear<Scalar>>("speaker_head", cfg.embed_dim, cfg.n_speakers);
    env_ = std::make_unique<nn::Sequential<Scalar>>("env_net");
    nn::Index in = cfg.embed_dim;
    for (int stage = 1; stage <= 2; ++stage) {
      const std::string p = "env_net." + std::to_string(stage);
      if (cfg.env_order == EnvNetOrder::bn_relu_fc) {
        env_->template add<nn::BatchNorm<Scalar>>(p + ".bn", in);
        env_->template add<nn::ReLU<Scalar>>(p + ".relu");
      } else {
        env_->template add<nn::ReLU<Scalar>>(p + ".relu");
        env_->template add<nn::BatchNorm<Scalar>>(p + ".bn", in);
      }
      env_->template add<nn::Linear<Scalar>>(p + ".fc", in, cfg.env_dim);
      in = cfg.env_dim;
    }
    body_->set_input_grad(false);
    const nn::Index extent = frequency_extent_before_fc(cfg.feature_bins(), 198);
    if (extent != cfg.fc_kernel_height()) {
      throw Error("trunk stride arithmetic yields frequency extent " + std::to_string(extent) +
                  " before fc, expected " + std::to_string(cfg.fc_kernel_height()));
    }
  }

  const TrunkConfig& config() const { return cfg_; }

  /// Independent random streams per module, so adding or removing one module
  /// never changes another's initial weights.
  void init(std::uint64_t seed) {
    Rng trunk_rng(derive_seed(seed, "init/trunk"));
    body_->init(trunk_rng);
    fc_->init(trunk_rng);
    Rng pool_rng(derive_seed(seed, "init/pool"));
    pool_->init(pool_rng);
    Rng head_rng(derive_seed(seed, "init/speaker_head"));
    head_->init(head_rng);
    Rng env_rng(derive_seed(seed, "init/env_net"));
    env_->init(env_rng);
  }

  nn::Index frequency_extent_before_fc(nn::Index bins, nn::Index frames) const {
    return body_->output_shape({1, bins, frames}).height;
  }

  nn::Shape frame_shape(nn::Index bins, nn::Index frames) const {
    return fc_->output_shape(body_->output_shape({1, bins, frames}));
  }

  /// Frame-level trunk output, [embed_dim x (N * T')] with height 1.
  Maps frames(const Maps& x, nn::Mode mode) {
    check_input(x);
    Maps h = body_->forward(x, mode);
    check_extent(h.height);
    return fc_->forward(h, mode);
  }

  Maps frames_infer(const Maps& x) const {
    check_input(x);
    Maps h = body_->infer(x);
    check_extent(h.height);
    return fc_->infer(h);
  }

  /// Pooled speaker embeddings s, [embed_dim x N].
  Matrix embed(const Maps& x, nn::Mode mode) { return pool_->forward(frames(x, mode), mode).data; }
  Matrix embed_infer(const Maps& x) const { return pool_->infer(frames_infer(x)).data; }

  /// Backpropagates d(loss)/d(s) through pooling and trunk.
  void embed_backward(const Matrix& grad) {
    const Maps g = pool_->backward(Maps::vectors(grad));
    body_->backward(fc_->backward(g));
  }

  nn::Linear<Scalar>& speaker_head() { return *head_; }
  const nn::Linear<Scalar>& speaker_head() const { return *head_; }
  nn::Sequential<Scalar>& env_net() { return *env_; }
  const nn::Sequential<Scalar>& env_net() const { return *env_; }
  nn::Layer<Scalar>& pool() { return *pool_; }

  bool has_verif_head() const { return static_cast<bool>(verif_); }
  nn::Linear<Scalar>& verif_head() {
    if (!verif_) throw Error("model has no verification head");
    return *verif_;
  }
  const nn::Linear<Scalar>& verif_head() const {
    if (!verif_) throw Error("model has no verification head");
    return *verif_;
  }
  /// 512 -> 512 affine layer initialised to the identity.
  nn::Linear<Scalar>& add_verif_head() {
    verif_ = std::make_unique<nn::Linear<Scalar>>("verif_head", cfg_.embed_dim, cfg_.embed_dim);
    verif_->weight().value.setIdentity();
    verif_->bias().value.setZero();
    return *verif_;
  }

  Matrix speaker_logits_infer(const Matrix& s) const { return head_->infer(Maps::vectors(s)).data; }
  Matrix env_infer(const Matrix& s) const { return env_->infer(Maps::vectors(s)).data; }
  Matrix verif_infer(const Matrix& s) const { return verif_head().infer(Maps::vectors(s)).data; }

  std::vector<nn::Parameter<Scalar>*> trunk_parameters() {
    std::vector<nn::Parameter<Scalar>*> out;
    body_->parameters(out);
    fc_->parameters(out);
    pool_->parameters(out);
    return out;
  }
  std::vector<nn::Parameter<Scalar>*> head_parameters() {
    std::vector<nn::Parameter<Scalar>*> out;
    head_->parameters(out);
    return out;
  }
  std::vector<nn::Parameter<Scalar>*> env_parameters() {
    std::vector<nn::Parameter<Scalar>*> out;
    env_->parameters(out);
    return out;
  }
  std::vector<nn::Parameter<Scalar>*> verif_parameters() {
    std::vector<nn::Parameter<Scalar>*> out;
    if (verif_) verif_->parameters(out);
    return out;
  }
  std::vector<nn::Parameter<Scalar>*> all_parameters() {
    auto out = trunk_parameters();
    head_->parameters(out);
    env_->parameters(out);
    if (verif_) verif_->parameters(out);
    return out;
  }

  std::vector<nn::Buffer<Scalar>> trunk_buffers() {
    std::vector<nn::Buffer<Scalar>> out;
    body_->buffers(out);
    fc_->buffers(out);
    return out;
  }
  std::vector<nn::Buffer<Scalar>> all_buffers() {
    auto out = trunk_buffers();
    env_->buffers(out);
    return out;
  }

  std::size_t trunk_parameter_count() {
    std::size_t n = 0;
    for (auto* p : trunk_parameters()) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

 private:
  void check_input(const Maps& x) const {
    if (x.channels() != 1 || x.height != cfg_.feature_bins()) {
      throw Error("trunk expects single-channel " + std::string(to_string(cfg_.feature_kind())) +
                  " input with " + std::to_string(cfg_.feature_bins()) + " bins, got " +
                  std::to_string(x.channels()) + " x " + std::to_string(x.height));
    }
  }

  void check_extent(nn::Index extent) const {
    if (extent != cfg_.fc_kernel_height()) {
      throw Error("frequency extent entering fc is " + std::to_string(extent) + ", expected " +
                  std::to_string(cfg_.fc_kernel_height()));
    }
  }

  TrunkConfig cfg_;
  std::unique_ptr<nn::Sequential<Scalar>> body_;
  std::unique_ptr<nn::Sequential<Scalar>> fc_;
  std::unique_ptr<nn::Layer<Scalar>> pool_;
  std::unique_ptr<nn::Linear<Scalar>> head_;
  std::unique_ptr<nn::Sequential<Scalar>> env_;
  std::unique_ptr<nn::Linear<Scalar>> verif_;
};

}  // namespace envadv

#endif  // ENVADV_NETS_HPP_
