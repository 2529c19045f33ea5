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

#include <algorithm>
#include <limits>
#include <random>

#include "../common/fixtures.hpp"
#include "envadv/checkpoint.hpp"
#include "envadv/eval.hpp"

using namespace envadv;
namespace fs = std::filesystem;

namespace {

/// Independent EER: every candidate threshold is scored by a full scan.
double brute_force_eer(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::vector<double> taus = scores;
  std::sort(taus.begin(), taus.end());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
  taus.insert(taus.begin(), -std::numeric_limits<double>::infinity());
  double nt = 0, nn = 0;
  for (int l : labels) (l ? nt : nn) += 1;
  double pf = 0, pr = 1;
  for (double tau : taus) {
    double fa = 0, fr = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (labels[i] == 0 && scores[i] <= tau) fa += 1;
      if (labels[i] == 1 && scores[i] > tau) fr += 1;
    }
    const double far = fa / nn, frr = fr / nt;
    if (frr <= far) {
      if (frr == far) return far;
      const double d0 = pr - pf, d1 = frr - far;
      return pf + d0 / (d0 - d1) * (far - pf);
    }
    pf = far;
    pr = frr;
  }
  return pf;
}

struct Fixture {
  fs::path root;
  Manifest manifest;
  Fixture() {
    root = envadv::testing::fresh_dir("eval");
    envadv::testing::write_noise_corpus(root, 3, 2, 3, 2.0);
    const fs::path long_root = envadv::testing::fresh_dir("eval-long");
    envadv::testing::write_noise_corpus(long_root, 1, 1, 2, 3.3, 5);
    std::vector<UtteranceRef> utts = scan_corpus(root).utterances();
    const Manifest long_manifest = scan_corpus(long_root);
    for (UtteranceRef u : long_manifest.utterances()) {
      u.utt_id = "long/" + u.utt_id;
      utts.push_back(u);
    }
    manifest = Manifest(std::move(utts));
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

Model tiny_model() {
  TrunkConfig c;
  c.width = 0.25;
  c.n_speakers = 3;
  Model net(c);
  net.init(4);
  return net;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("EER basics") {
  CHECK(compute_eer({0.1, 0.2, 0.8, 0.9}, {1, 1, 0, 0}) == 0.0);
  CHECK(compute_eer({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u;
  std::vector<double> s(20000);
  std::vector<int> l(20000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = u(rng);
    l[i] = u(rng) < 0.5;
  }
  CHECK(std::abs(compute_eer(s, l) - 0.5) < 0.02);
  CHECK_THROWS_AS(compute_eer({0.1, 0.2}, {1, 1}), Error);
  CHECK_THROWS_AS(compute_eer({0.1, std::nan("")}, {1, 0}), Error);
}

TEST_CASE("EER matches the brute-force sweep and ignores monotone transforms") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> coin(0, 1);
  for (int set = 0; set < 20; ++set) {
    std::vector<double> s(1000);
    std::vector<int> l(1000);
    for (std::size_t i = 0; i < s.size(); ++i) {
      l[i] = coin(rng);
      s[i] = g(rng) - 0.8 * l[i];
      if (set % 4 == 0) s[i] = std::round(s[i] * 10) / 10;  // heavy ties
    }
    const double eer = compute_eer(s, l);
    CHECK(std::abs(eer - brute_force_eer(s, l)) < 1e-9);
    std::vector<double> t(s.size());
    std::transform(s.begin(), s.end(), t.begin(), [](double v) { return 2.0 * v; });
    CHECK(compute_eer(t, l) == eer);
  }
}

TEST_CASE("crop-grid distance") {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> g;
  Eigen::MatrixXf a(16, 10), b(16, 10);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a.data()[i] = g(rng);
    b.data()[i] = g(rng);
  }
  double brute = 0;
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 10; ++j) {
      brute += (a.col(i).cast<double>().normalized() - b.col(j).cast<double>().normalized()).norm();
    }
  }
  CHECK(score_pair(a, b) == doctest::Approx(brute / 100).epsilon(1e-12));
  CHECK(std::abs(score_pair(a, b) - score_pair(b, a)) < 1e-9);
  CHECK(score_pair(a, b, DistanceMetric::euclidean) >= 0);
  const Eigen::MatrixXf same = a.col(0).replicate(1, 10);
  CHECK(score_pair(same, same, DistanceMetric::euclidean) == 0.0);
}

TEST_CASE("top-k") {
  Eigen::VectorXf logits(4);
  logits << 0.1f, 3.0f, 0.2f, 3.0f;
  CHECK(!in_top_k(logits, 1, 1));  // tie counts against the label
  CHECK(in_top_k(logits, 1, 2));
  CHECK(in_top_k(logits, 2, 3));
  CHECK(!in_top_k(logits, 0, 3));
  Eigen::VectorXf onehot = Eigen::VectorXf::Zero(1211);
  onehot[77] = 1;
  CHECK(in_top_k(onehot, 77, 1));

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u;
  std::uniform_int_distribution<int> label(0, 1210);
  const int trials = 20000;
  int top1 = 0, top5 = 0;
  Eigen::VectorXf x(1211);
  for (int i = 0; i < trials; ++i) {
    for (Eigen::Index c = 0; c < x.size(); ++c) x[c] = u(rng);
    const int y = label(rng);
    top1 += in_top_k(x, y, 1);
    top5 += in_top_k(x, y, 5);
    CHECK(top1 <= top5);
  }
  const double p1 = 1.0 / 1211, p5 = 5.0 / 1211;
  CHECK(std::abs(static_cast<double>(top1) / trials - p1) < 4 * std::sqrt(p1 * (1 - p1) / trials));
  CHECK(std::abs(static_cast<double>(top5) / trials - p5) < 4 * std::sqrt(p5 * (1 - p5) / trials));
}

TEST_CASE("model scoring is symmetric, read-only and zero on identical 2 s utterances") {
  const auto& f = fixture();
  Model net = tiny_model();
  FeatureStore store(f.manifest, FeatureKind::fbank40, {}, std::nullopt);
  const std::string a = "id10001/vid0/00001", b = "id10002/vid1/00002";
  EvalConfig cfg;
  cfg.metric = DistanceMetric::euclidean;
  CHECK(score_pair(net, store, a, a, cfg) == 0.0);
  CHECK(std::abs(score_pair(net, store, a, b) - score_pair(net, store, b, a)) < 1e-9);

  const std::uint64_t before = parameter_checksum(net.all_parameters());
  TrialList trials;
  trials.pairs = {{1, a, "id10001/vid1/00003"}, {0, a, b}, {1, "long/id10001/vid0/00001", "long/id10001/vid0/00002"}};
  const auto s1 = score_trials(net, store, trials, cfg);
  cfg.workers = 3;
  CHECK(score_trials(net, store, trials, cfg) == s1);
  CHECK(parameter_checksum(net.all_parameters()) == before);
}

TEST_CASE("identification with an oracle head") {
  const auto& f = fixture();
  Model net = tiny_model();
  FeatureStore store(f.manifest, FeatureKind::fbank40, {}, std::nullopt);
  const auto& all = f.manifest.utterances();
  Manifest test(std::vector<UtteranceRef>(all.begin(), all.begin() + 18));
  const auto speakers = test.speakers();
  const auto r = eval_identification(net, store, test, speakers, 2);
  CHECK(r.n == 18);
  CHECK(r.top1 <= r.top5);
  CHECK(r.top5 == 1.0);  // three classes
}

TEST_CASE("environment probe on constructed embeddings") {
  // Embeddings that encode only the video: same-video pairs at distance 0.
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 50; ++i) {
    const int va = i % 3, vb = (i / 3) % 3;
    Eigen::MatrixXf ea = Eigen::MatrixXf::Zero(3, 2), eb = Eigen::MatrixXf::Zero(3, 2);
    ea.row(va).setOnes();
    eb.row(vb).setOnes();
    scores.push_back(score_pair(ea, eb));
    labels.push_back(va == vb);
  }
  CHECK(compute_eer(scores, labels) == 0.0);
}

TEST_CASE("perturbations") {
  const auto h = lowpass_fir(1000, 101);
  double dc = 0;
  for (float v : h) dc += v;
  CHECK(dc == doctest::Approx(1.0).epsilon(1e-5));
  std::vector<float> hi(16000), lo(16000);
  for (int i = 0; i < 16000; ++i) {
    hi[i] = static_cast<float>(std::sin(2 * 3.141592653589793 * 6000 * i / 16000.0));
    lo[i] = static_cast<float>(std::sin(2 * 3.141592653589793 * 200 * i / 16000.0));
  }
  auto power = [](const std::vector<float>& x) {
    double p = 0;
    for (std::size_t i = 200; i < x.size(); ++i) p += static_cast<double>(x[i]) * x[i];
    return p / static_cast<double>(x.size() - 200);
  };
  PerturbSpec spec;
  CHECK(spec.is_identity());
  std::vector<float> same = hi;
  apply_perturbation(spec, "u", same);
  CHECK(same == hi);
  spec.fir = h;
  std::vector<float> hf = hi, lf = lo;
  apply_perturbation(spec, "u", hf);
  apply_perturbation(spec, "u", lf);
  CHECK(power(hf) < 1e-3 * power(hi));
  CHECK(power(lf) == doctest::Approx(power(lo)).epsilon(0.02));

  PerturbSpec noisy;
  noisy.snr_db = 10;
  noisy.seed = 3;
  std::vector<float> x = lo, y = lo;
  apply_perturbation(noisy, "u", x);
  apply_perturbation(noisy, "u", y);
  CHECK(x == y);
  std::vector<float> n(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) n[i] = x[i] - lo[i];
  CHECK(10 * std::log10(power(lo) / power(n)) == doctest::Approx(10.0).epsilon(0.02));
}

TEST_CASE("identity perturbation reproduces the clean EER exactly") {
  const auto& f = fixture();
  const Model net = tiny_model();
  const TrialList trials = build_verification_trials(f.manifest.filter({Split::unassigned}), 20, 1);
  const auto r = channel_perturb_eval(net, f.manifest, FeatureKind::fbank40, {}, trials, PerturbSpec{});
  CHECK(r.perturbed_eer == r.clean_eer);
}

TEST_CASE("score files round trip") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  std::vector<double> s(500);
  std::vector<int> l(500);
  for (std::size_t i = 0; i < s.size(); ++i) {
    l[i] = static_cast<int>(i % 2);
    s[i] = g(rng) + l[i];
  }
  const fs::path file = envadv::testing::fresh_dir("scores") / "s.txt";
  save_scores(file, l, s);
  std::vector<double> s2;
  std::vector<int> l2;
  load_scores(file, l2, s2);
  CHECK(s2 == s);
  CHECK(l2 == l);
  CHECK(compute_eer(s2, l2) == compute_eer(s, l));
}

TEST_CASE("report formats") {
  EvalReport r;
  r.task = EvalTask::env_probe;
  r.eer = 0.25;
  r.n_trials = 400;
  r.config_hash = 0xabc;
  const std::string kv = r.key_values();
  CHECK(kv.find("task=env-probe\n") != std::string::npos);
  CHECK(kv.find("eer=0.25\n") != std::string::npos);
  CHECK(kv.find("n_trials=400\n") != std::string::npos);
  CHECK(r.table().find("25.00%") != std::string::npos);
  CHECK(parse_eval_task("perturb") == EvalTask::perturb);
  CHECK_THROWS_AS(parse_eval_task("replay"), Error);
}

}  // TEST_SUITE
