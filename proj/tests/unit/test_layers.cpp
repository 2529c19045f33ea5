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

#include "../common/fd.hpp"
#include "envadv/nn/layers.hpp"
#include "envadv/nn/pooling.hpp"

using namespace envadv;
using namespace envadv::nn;
using envadv::testing::numeric_gradient;
using envadv::testing::relative_error;
using Maps = FeatureMaps<double>;

namespace {

Maps random_maps(Index c, Index n, Index h, Index w, std::mt19937_64& rng) {
  Maps x(c, n, h, w);
  std::normal_distribution<double> g;
  for (Index i = 0; i < x.data.size(); ++i) x.data.data()[i] = g(rng);
  return x;
}

/// Checks input and parameter gradients of sum(W .* layer(x)).
void check_layer(Layer<double>& layer, Maps x, double tol = 1e-6) {
  std::mt19937_64 rng(99);
  layer.set_input_grad(true);
  const Maps y = layer.forward(x, Mode::training());
  Maps w = random_maps(y.channels(), y.batch, y.height, y.width, rng);
  std::vector<Parameter<double>*> params;
  layer.parameters(params);
  for (auto* p : params) p->grad.setZero();
  const Maps dx = layer.backward(w);
  auto f = [&] { return (layer.forward(x, Mode::training()).data.array() * w.data.array()).sum(); };
  CHECK(relative_error(dx.data, numeric_gradient(f, x.data)) < tol);
  for (auto* p : params) {
    const Eigen::MatrixXd analytic = p->grad;
    CAPTURE(p->name);
    CHECK(relative_error(analytic, numeric_gradient(f, p->value)) < tol);
  }
}

}  // namespace

TEST_SUITE("layers") {

TEST_CASE("conv2d gradients") {
  std::mt19937_64 rng(1);
  Conv2dOptions o;
  o.in_channels = 2;
  o.out_channels = 3;
  o.kernel_h = 3;
  o.kernel_w = 2;
  o.stride_h = 2;
  o.stride_w = 1;
  o.pad_h = 1;
  o.pad_w = 1;
  o.bias = true;
  Conv2d<double> conv("c", o);
  conv.init(rng);
  check_layer(conv, random_maps(2, 2, 5, 4, rng));
}

TEST_CASE("conv2d matches direct convolution") {
  std::mt19937_64 rng(2);
  Conv2dOptions o;
  o.in_channels = 2;
  o.out_channels = 2;
  o.kernel_h = 3;
  o.kernel_w = 3;
  o.stride_h = 2;
  o.stride_w = 2;
  o.pad_h = 1;
  o.pad_w = 0;
  Conv2d<double> conv("c", o);
  conv.init(rng);
  const Maps x = random_maps(2, 1, 6, 7, rng);
  const Maps y = conv.infer(x);
  const auto& w = conv.weight().value;
  for (Index oc = 0; oc < 2; ++oc) {
    for (Index oy = 0; oy < y.height; ++oy) {
      for (Index ox = 0; ox < y.width; ++ox) {
        double acc = 0;
        for (Index ky = 0; ky < 3; ++ky) {
          for (Index kx = 0; kx < 3; ++kx) {
            const Index iy = oy * 2 - 1 + ky, ix = ox * 2 + kx;
            if (iy < 0 || iy >= 6 || ix < 0 || ix >= 7) continue;
            for (Index ic = 0; ic < 2; ++ic) acc += w(oc, (ky * 3 + kx) * 2 + ic) * x.data(ic, x.column(0, iy, ix));
          }
        }
        CHECK(y.data(oc, y.column(0, oy, ox)) == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("maxpool gradients and padding") {
  std::mt19937_64 rng(3);
  PoolOptions o;
  o.stride_h = 1;
  o.stride_w = 2;
  o.pad_h = 1;
  o.pad_w = 1;
  MaxPool2d<double> pool("p", o);
  check_layer(pool, random_maps(2, 2, 5, 6, rng));
  // All-negative input: padding never wins.
  Maps x(1, 1, 2, 2);
  x.data << -4, -3, -2, -1;
  const Maps y = pool.infer(x);
  CHECK(y.data.maxCoeff() == -1);
}

TEST_CASE("batchnorm gradients and statistics") {
  std::mt19937_64 rng(4);
  BatchNorm<double> bn("bn", 3);
  bn.gamma().value << 1.5, 0.7, 1.0;
  bn.beta().value << 0.1, -0.2, 0.3;
  check_layer(bn, random_maps(3, 4, 2, 3, rng));

  // Identical vectors in a training batch normalise to zero.
  BatchNorm<double> fresh("bn", 4);
  Maps same = Maps::vectors(Eigen::MatrixXd::Constant(4, 6, 2.5));
  CHECK(fresh.forward(same, Mode::training()).data.cwiseAbs().maxCoeff() < 1e-12);

  // Frozen statistics leave the running estimates alone.
  BatchNorm<double> frozen("bn", 3);
  frozen.forward(random_maps(3, 4, 1, 1, rng), Mode::frozen_stats());
  CHECK(frozen.running_mean().isZero(0));
  CHECK(frozen.running_var().isOnes(0));
  frozen.forward(random_maps(3, 4, 1, 1, rng), Mode::training());
  CHECK(!frozen.running_mean().isZero(0));
}

TEST_CASE("relu and linear gradients") {
  std::mt19937_64 rng(5);
  ReLU<double> relu("r");
  check_layer(relu, random_maps(3, 2, 2, 2, rng));
  Linear<double> lin("l", 4, 3);
  lin.init(rng);
  lin.bias().value.setRandom();
  check_layer(lin, Maps::vectors(random_maps(4, 5, 1, 1, rng).data));
}

TEST_CASE("linear layer special cases") {
  std::mt19937_64 rng(6);
  Linear<double> lin("l", 5, 5);
  const Maps x = Maps::vectors(random_maps(5, 3, 1, 1, rng).data);
  CHECK(lin.infer(x).data.isZero(0));
  lin.weight().value.setIdentity();
  CHECK(lin.infer(x).data == x.data);
  lin.init(rng);
  lin.bias().value.setRandom();
  const Eigen::MatrixXd want = (lin.weight().value * x.data).colwise() + lin.bias().value.col(0);
  CHECK(relative_error(lin.infer(x).data, want) < 1e-14);
}

TEST_CASE("basic block gradients") {
  std::mt19937_64 rng(7);
  BasicBlock<double> block("b", 2, 3, 2);
  block.init(rng);
  check_layer(block, random_maps(2, 2, 4, 4, rng), 1e-5);
}

TEST_CASE("temporal average pooling") {
  std::mt19937_64 rng(8);
  const Maps x = random_maps(512, 2, 1, 5, rng);
  const Eigen::MatrixXd y = pool_tap(x);
  for (Index n = 0; n < 2; ++n) {
    for (Index c = 0; c < 512; ++c) {
      double s = 0;
      for (Index t = 0; t < 5; ++t) s += x.data(c, x.column(n, 0, t));
      CHECK(std::abs(y(c, n) - s / 5) < 1e-6);
    }
  }
  Maps constant(3, 1, 1, 4);
  constant.data.colwise() = Eigen::Vector3d(1, -2, 3);
  CHECK(pool_tap(constant).col(0).isApprox(Eigen::Vector3d(1, -2, 3)));
  TemporalAveragePool<double> tap("tap");
  check_layer(tap, random_maps(3, 2, 1, 4, rng));
}

TEST_CASE("self-attentive pooling") {
  std::mt19937_64 rng(9);
  SelfAttentivePool<double> sap("sap", 6, 4);
  sap.init(rng);
  const Maps x = random_maps(6, 3, 1, 5, rng);
  check_layer(sap, x);

  // Step-by-step recomputation.
  const auto p = sap.params();
  const Eigen::MatrixXd y = pool_sap(x, p);
  for (Index n = 0; n < 3; ++n) {
    Eigen::VectorXd score(5);
    for (Index t = 0; t < 5; ++t) {
      const Eigen::VectorXd h = (p.W * x.data.col(x.column(n, 0, t)) + p.b).array().tanh();
      score[t] = h.dot(p.mu);
    }
    const Eigen::VectorXd w = (score.array() - score.maxCoeff()).exp() / (score.array() - score.maxCoeff()).exp().sum();
    CHECK(std::abs(w.sum() - 1) < 1e-12);
    CHECK(w.minCoeff() >= 0);
    Eigen::VectorXd e = Eigen::VectorXd::Zero(6);
    for (Index t = 0; t < 5; ++t) e += w[t] * x.data.col(x.column(n, 0, t));
    CHECK((y.col(n) - e).cwiseAbs().maxCoeff() < 1e-6);
  }

  // mu = 0 gives uniform weights, so SAP equals TAP.
  sap.mu().value.setZero();
  CHECK((pool_sap(x, sap.params()) - pool_tap(x)).cwiseAbs().maxCoeff() < 1e-6);
  // A single frame is returned unchanged.
  const Maps one = random_maps(6, 2, 1, 1, rng);
  sap.init(rng);
  CHECK((pool_sap(one, sap.params()) - one.data).cwiseAbs().maxCoeff() < 1e-12);
}

}  // TEST_SUITE
