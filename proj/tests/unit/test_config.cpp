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

#include <fstream>

#include "../common/fixtures.hpp"
#include "envadv/config.hpp"
#include "envadv/feature_store.hpp"

using namespace envadv;
namespace fs = std::filesystem;

TEST_SUITE("config") {

TEST_CASE("JSON round trip keeps every field") {
  RunConfig c;
  c.trunk.arch = Arch::thin_resnet34;
  c.trunk.pool = PoolKind::sap;
  c.trunk.width = 0.5;
  c.train.loss.alpha = 10;
  c.train.loss.normalize_env = true;
  c.train.order = PhaseOrder::speaker_then_env;
  c.dsp.mvn_mode = MvnMode::utterance;
  c.eval.metric = DistanceMetric::euclidean;
  c.paths.out_dir = "runs/x";
  const RunConfig back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  CHECK(back.trunk == c.trunk);
}

TEST_CASE("dotted assignments") {
  RunConfig c;
  c.set("train.loss.alpha=10");
  CHECK(c.train.loss.alpha == 10);
  c.set("trunk.arch=thin_resnet34");
  CHECK(c.trunk.arch == Arch::thin_resnet34);
  c.set("paths.out_dir=runs/a b");
  CHECK(c.paths.out_dir == fs::path("runs/a b"));
  c.set("train.loss.normalize_env=true");
  CHECK(c.train.loss.normalize_env);
  CHECK_THROWS_AS(c.set("train.nope=1"), Error);
  CHECK_THROWS_AS(c.set("train.lr0"), Error);
  CHECK_THROWS_AS(c.set("trunk.arch=resnet50"), Error);
}

TEST_CASE("hash ignores paths and worker counts only") {
  RunConfig a, b;
  b.paths.out_dir = "elsewhere";
  b.train.workers = 8;
  b.eval.workers = 3;
  CHECK(a.hash() == b.hash());
  b.train.seed = 1;
  CHECK(a.hash() != b.hash());
}

TEST_CASE("loading rejects unknown sections and bad values") {
  const auto dir = envadv::testing::fresh_dir("config");
  std::ofstream(dir / "bad.json") << R"({"trunk": {}, "mystery": {}})";
  CHECK_THROWS_AS(RunConfig::load(dir / "bad.json"), Error);
  CHECK_THROWS_AS(RunConfig::load(dir / "missing.json"), Error);
  std::ofstream(dir / "partial.json") << R"({"train": {"lr0": 0.5}})";
  const RunConfig p = RunConfig::load(dir / "partial.json");
  CHECK(p.train.lr0 == 0.5);
  CHECK(p.train.lr_decay == 0.95);
  TrainConfig t;
  t.lr0 = -1;
  CHECK_THROWS_AS(t.validate(), Error);
}

TEST_CASE("dsp hash tracks feature-changing fields") {
  DspConfig a, b;
  CHECK(a.hash(FeatureKind::fbank40) == b.hash(FeatureKind::fbank40));
  CHECK(a.hash(FeatureKind::fbank40) != a.hash(FeatureKind::spectrogram257));
  b.n_mels = 64;
  CHECK(a.hash(FeatureKind::fbank40) != b.hash(FeatureKind::fbank40));
}

}  // TEST_SUITE

TEST_SUITE("feature_store") {

namespace {

struct StoreFixture {
  Manifest manifest;
  StoreFixture() {
    const auto root = envadv::testing::fresh_dir("store");
    envadv::testing::write_noise_corpus(root, 2, 2, 2, 3.1);
    manifest = scan_corpus(root);
  }
};

const Manifest& store_corpus() {
  static const StoreFixture f;
  return f.manifest;
}

}  // namespace

TEST_CASE("segments equal the waveform path on and off the hop grid") {
  FeatureStore store(store_corpus(), FeatureKind::fbank40, {}, std::nullopt);
  for (const auto& u : store_corpus().utterances()) {
    const auto x = load_waveform(u.path);
    for (double offset : {0.0, 0.5, 1.1, 0.1234}) {
      const auto direct = segment_features<float>(x.samples, FeatureKind::fbank40, offset);
      CHECK(store.segment(u.utt_id, offset).values == direct.values);
    }
  }
  CHECK(store.memo_hits() > 0);
  CHECK_THROWS_AS(store.segment("nobody/none/00001", 0.0), Error);
}

TEST_CASE("disk cache round trip") {
  const auto cache = envadv::testing::fresh_dir("store-cache");
  const auto& u = store_corpus().utterances().front();
  Eigen::MatrixXf first;
  {
    FeatureStore store(store_corpus(), FeatureKind::fbank40, {}, cache);
    first = *store.full(u.utt_id);
    CHECK(fs::exists(store.cache_file(u.utt_id)));
  }
  FeatureStore again(store_corpus(), FeatureKind::fbank40, {}, cache);
  CHECK(*again.full(u.utt_id) == first);
  DspConfig other;
  other.n_mels = 32;
  FeatureStore different(store_corpus(), FeatureKind::fbank40, other, cache);
  CHECK(different.cache_file(u.utt_id) != again.cache_file(u.utt_id));
}

TEST_CASE("waveform transforms apply and bypass the cache") {
  const auto cache = envadv::testing::fresh_dir("store-transform");
  FeatureStore store(store_corpus(), FeatureKind::fbank40, {}, cache);
  const auto& u = store_corpus().utterances().front();
  const auto clean = store.segment(u.utt_id, 0.0).values;
  FeatureStore quiet(store_corpus(), FeatureKind::fbank40, {}, cache);
  quiet.set_transform([](const UtteranceRef&, std::vector<float>& x) {
    for (auto& v : x) v *= 0.5f;
  });
  const auto fbank = *quiet.full(u.utt_id);
  const auto plain = *store.full(u.utt_id);
  // Halving the amplitude shifts every log-mel value by ln(1/4).
  CHECK(((fbank - plain).array() - std::log(0.25f)).abs().maxCoeff() < 1e-3f);
  // After MVN the segment is unchanged up to rounding.
  CHECK((quiet.segment(u.utt_id, 0.0).values - clean).cwiseAbs().maxCoeff() < 1e-3f);
}

}  // TEST_SUITE
