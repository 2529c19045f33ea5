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

#include <doctest.h>

#include <random>

#include "envadv/nets.hpp"

using namespace envadv;
using Maps = nn::FeatureMaps<float>;

namespace {

Maps random_input(int bins, int frames, int batch, std::uint64_t seed) {
  Maps x(1, batch, bins, frames);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] = g(rng);
  return x;
}

TrunkConfig small_vgg() {
  TrunkConfig c;
  c.width = 0.25;
  c.n_speakers = 7;
  return c;
}

}  // namespace

TEST_SUITE("nets") {

TEST_CASE("frequency extent entering fc") {
  TrunkConfig vgg;
  CHECK(SpeakerNet<float>(vgg).frequency_extent_before_fc(40, 198) == 4);
  TrunkConfig res;
  res.arch = Arch::thin_resnet34;
  CHECK(SpeakerNet<float>(res).frequency_extent_before_fc(257, 198) == 9);
  CHECK(res.feature_kind() == FeatureKind::spectrogram257);
  CHECK(vgg.feature_kind() == FeatureKind::fbank40);
}

TEST_CASE("frame extent is monotone in input length") {
  SpeakerNet<float> net(small_vgg());
  nn::Index prev = 0;
  for (int t = 150; t <= 400; t += 7) {
    const nn::Index w = net.frame_shape(40, t).width;
    CHECK(w >= prev);
    prev = w;
  }
}

TEST_CASE("embedding shape and non-degenerate forward") {
  TrunkConfig c = small_vgg();
  c.width = 0.5;
  SpeakerNet<float> net(c);
  net.init(1);
  const Maps x = random_input(40, 198, 2, 3);
  const Eigen::MatrixXf s = net.embed_infer(x);
  CHECK(s.rows() == 512);
  CHECK(s.cols() == 2);
  CHECK((s.col(0) - s.col(1)).norm() > 0);
  CHECK(net.embed_infer(x) == s);
  CHECK_THROWS_AS(net.embed_infer(random_input(257, 198, 1, 3)), Error);
}

TEST_CASE("thin resnet embedding is 512-d and has a quarter of the channels") {
  TrunkConfig c;
  c.arch = Arch::thin_resnet34;
  c.pool = PoolKind::sap;
  c.n_speakers = 3;
  SpeakerNet<float> thin(c);
  thin.init(2);
  CHECK(thin.embed_infer(random_input(257, 198, 1, 4)).rows() == 512);
  TrunkConfig full = c;
  full.width = 4.0;  // standard ResNet-34 widths 64..512
  CHECK(thin.trunk_parameter_count() < SpeakerNet<float>(full).trunk_parameter_count());
}

TEST_CASE("environment network in eval mode") {
  TrunkConfig c = small_vgg();
  c.embed_dim = 6;
  c.env_dim = 4;
  SpeakerNet<double> net(c);
  net.init(5);
  auto& env = net.env_net();
  // Unit running statistics: each BN divides by sqrt(1 + eps).
  const double k = 1.0 / std::sqrt(1.0 + 1e-5);
  auto& fc1 = dynamic_cast<nn::Linear<double>&>(env[2]);
  auto& fc2 = dynamic_cast<nn::Linear<double>&>(env[5]);
  fc1.bias().value.setRandom();
  fc2.bias().value.setRandom();
  const Eigen::MatrixXd s = Eigen::MatrixXd::Random(6, 3).cwiseAbs();
  const Eigen::MatrixXd h = ((fc1.weight().value * (k * s)).colwise() + fc1.bias().value.col(0));
  const Eigen::MatrixXd want = (fc2.weight().value * (k * h.cwiseMax(0.0))).colwise() + fc2.bias().value.col(0);
  CHECK((net.env_infer(s) - want).cwiseAbs().maxCoeff() < 1e-6);

  fc1.bias().value.setZero();
  fc2.bias().value.setZero();
  CHECK(net.env_infer(Eigen::MatrixXd::Zero(6, 2)).isZero(0));
}

TEST_CASE("verification head starts as the identity") {
  SpeakerNet<float> net(small_vgg());
  net.init(3);
  CHECK(!net.has_verif_head());
  net.add_verif_head();
  const Eigen::MatrixXf s = Eigen::MatrixXf::Random(512, 4);
  CHECK(net.verif_infer(s) == s);
  net.verif_head().weight().value.setZero();
  CHECK(net.verif_infer(s).isZero(0));
}

TEST_CASE("initialisation streams are independent per module") {
  TrunkConfig a = small_vgg();
  TrunkConfig b = a;
  b.env_dim = 256;
  SpeakerNet<float> na(a), nb(b);
  na.init(9);
  nb.init(9);
  auto pa = na.trunk_parameters(), pb = nb.trunk_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
  CHECK(na.speaker_head().weight().value == nb.speaker_head().weight().value);
}

TEST_CASE("enum text round trips") {
  CHECK(parse_arch("thin-resnet34") == Arch::thin_resnet34);
  CHECK(parse_arch(to_string(Arch::vggm40)) == Arch::vggm40);
  CHECK(parse_pool("sap") == PoolKind::sap);
  CHECK_THROWS_AS(parse_arch("resnet50"), Error);
}

}  // TEST_SUITE
