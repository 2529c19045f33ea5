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

#include <cmath>
#include <random>

#include "../common/fd.hpp"
#include "envadv/losses.hpp"

using namespace envadv;
using envadv::testing::numeric_gradient;
using envadv::testing::relative_error;
using M = Eigen::MatrixXd;

namespace {

M random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  M m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

M scalar(double v) { return M::Constant(1, 1, v); }

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("triplet loss values") {
  CHECK(env_triplet_loss<double>(scalar(0), scalar(1), scalar(0.5), 0.3) == doctest::Approx(1.05).epsilon(1e-15));
  // All embeddings equal: loss is the margin.
  const M x = M::Random(8, 5);
  CHECK(env_triplet_loss<double>(x, x, x, 0.3) == doctest::Approx(0.3).epsilon(1e-15));
  // Satisfied triplet.
  CHECK(env_triplet_loss<double>(scalar(0), scalar(0), scalar(1), 0.3) == 0.0);
}

TEST_CASE("confusion loss values and limits") {
  // d_ap = 0, d_an = ln 3 gives p = (1/4, 3/4).
  const double kl = confusion_loss<double>(scalar(0), scalar(0), scalar(std::sqrt(std::log(3.0))));
  CHECK(kl == doctest::Approx(0.13081203594113697).epsilon(1e-12));
  CHECK(confusion_kl<double>(2.5, 2.5) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(std::abs(confusion_kl<double>(2.5, 2.5)) < 1e-12);
  const double far = confusion_kl<double>(0.0, 700.0);
  CHECK(far <= std::log(2.0));
  CHECK(far == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(confusion_kl<double>(0.3, 1.7) == doctest::Approx(confusion_kl<double>(1.7, 0.3)).epsilon(1e-15));
}

TEST_CASE("confusion gradient pulls distances together") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 4.0);
  for (int i = 0; i < 50; ++i) {
    const double a = u(rng), b = u(rng);
    double ga = 0, gb = 0;
    confusion_kl<double>(a, b, &ga, &gb);
    const double step = 1e-3;
    CHECK(std::abs((a - step * ga) - (b - step * gb)) <= std::abs(a - b));
  }
}

TEST_CASE("cross entropy of uniform logits") {
  const M logits = M::Constant(1211, 4, 0.25);
  CHECK(cross_entropy<double>(logits, {0, 5, 17, 1210}) == doctest::Approx(7.099201743553092).epsilon(1e-12));
  CHECK_THROWS_AS(cross_entropy<double>(logits, {0, 5, 17, 1211}), Error);
}

TEST_CASE("speaker phase loss composition") {
  std::mt19937_64 rng(5);
  const M logits = random_matrix(7, 6, rng);
  const std::vector<int> labels = {0, 1, 2, 3, 4, 5};
  const M a = random_matrix(4, 2, rng), p = random_matrix(4, 2, rng), n = random_matrix(4, 2, rng);
  const auto zero = speaker_phase_loss<double>(logits, labels, a, p, n, 0.0);
  CHECK(zero.total == cross_entropy<double>(logits, labels));
  // Equal distances: the confusion term vanishes for any alpha.
  const M n_eq = a - (p - a);  // mirror of p through a
  const auto eq = speaker_phase_loss<double>(logits, labels, a, p, n_eq, 10.0);
  CHECK(std::abs(eq.total - eq.ce) < 1e-12);
}

TEST_CASE("contrastive loss values") {
  CHECK(contrastive_loss<double>(scalar(1.5), scalar(1.5), {1}, 1.0) == 0.0);
  CHECK(contrastive_loss<double>(scalar(0.0), scalar(1.2), {0}, 1.0) == 0.0);
  CHECK(contrastive_loss<double>(scalar(0.0), scalar(0.3), {0}, 1.0) == doctest::Approx(0.48999999999999994).epsilon(1e-14));
}

TEST_CASE("non-finite inputs are rejected") {
  M a = M::Zero(3, 2);
  a(1, 1) = std::nan("");
  CHECK_THROWS_AS(env_triplet_loss<double>(a, a, a, 0.3), Error);
  CHECK_THROWS_AS(confusion_loss<double>(a, a, a), Error);
}

TEST_CASE("gradients match finite differences") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    M a = random_matrix(6, 4, rng), p = random_matrix(6, 4, rng), n = random_matrix(6, 4, rng);
    TripletGrad<double> g;
    env_triplet_loss<double>(a, p, n, 2.0, &g);
    auto tl = [&] { return env_triplet_loss<double>(a, p, n, 2.0); };
    CHECK(relative_error(g.a, numeric_gradient(tl, a)) < 1e-6);
    CHECK(relative_error(g.p, numeric_gradient(tl, p)) < 1e-6);
    CHECK(relative_error(g.n, numeric_gradient(tl, n)) < 1e-6);

    confusion_loss<double>(a, p, n, &g);
    auto cl = [&] { return confusion_loss<double>(a, p, n); };
    CHECK(relative_error(g.a, numeric_gradient(cl, a)) < 1e-6);
    CHECK(relative_error(g.n, numeric_gradient(cl, n)) < 1e-6);

    M x1 = random_matrix(5, 6, rng, 0.3), x2 = random_matrix(5, 6, rng, 0.3);
    const std::vector<int> same = {1, 0, 1, 0, 0, 1};
    M g1, g2;
    contrastive_loss<double>(x1, x2, same, 1.0, &g1, &g2);
    auto ct = [&] { return contrastive_loss<double>(x1, x2, same, 1.0); };
    CHECK(relative_error(g1, numeric_gradient(ct, x1)) < 1e-6);
    CHECK(relative_error(g2, numeric_gradient(ct, x2)) < 1e-6);

    M x = random_matrix(5, 3, rng);
    const M w = random_matrix(5, 3, rng);
    const M gx = l2_normalize_backward<double>(x, w);
    auto nl = [&] { return (l2_normalize<double>(x).array() * w.array()).sum(); };
    CHECK(relative_error(gx, numeric_gradient(nl, x)) < 1e-6);
  }
}

}  // TEST_SUITE
