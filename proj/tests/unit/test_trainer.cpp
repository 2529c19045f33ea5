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
#include <random>
#include <sstream>

#include "../common/fixtures.hpp"
#include "envadv/eval.hpp"
#include "envadv/synthgen.hpp"
#include "envadv/trainer.hpp"

using namespace envadv;
namespace fs = std::filesystem;

namespace {

using Snapshot = std::vector<Eigen::MatrixXf>;

Snapshot snapshot(const std::vector<nn::Parameter<float>*>& params) {
  Snapshot out;
  for (const auto* p : params) out.push_back(p->value);
  return out;
}

Snapshot snapshot(const std::vector<nn::Buffer<float>>& buffers) {
  Snapshot out;
  for (const auto& b : buffers) out.push_back(*b.value);
  return out;
}

std::vector<nn::Buffer<float>> env_buffers(Model& net) {
  std::vector<nn::Buffer<float>> out;
  for (const auto& b : net.all_buffers()) {
    if (b.name.rfind("env", 0) == 0) out.push_back(b);
  }
  return out;
}

TrunkConfig tiny_trunk(int n_speakers) {
  TrunkConfig c;
  c.width = 0.25;
  c.n_speakers = n_speakers;
  return c;
}

/// Random triplet batch of `n` triplets over `speakers` labels.
TripletBatch<float> random_batch(int n, int speakers, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  TripletBatch<float> b;
  b.x = nn::FeatureMaps<float>(1, 3 * n, 40, 198);
  for (Eigen::Index i = 0; i < b.x.data.size(); ++i) b.x.data.data()[i] = g(rng);
  for (int part = 0; part < 3; ++part) {
    for (int i = 0; i < n; ++i) {
      b.labels.push_back(i % speakers);
      b.utt_ids.push_back("u" + std::to_string(part) + "_" + std::to_string(i));
    }
  }
  return b;
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct ToyCorpus {
  Manifest manifest;
  ToyCorpus() {
    synth::SynthSpec spec;
    spec.n_speakers = 4;
    spec.n_envs_per_speaker = 2;
    spec.utts_per_env = 4;
    spec.utt_len_s = 2.5;
    spec.n_prototypes = 4;
    spec.seed = 11;
    const auto dir = envadv::testing::fresh_dir("trainer-corpus");
    manifest = make_splits(synth::generate(spec, dir, 1, false).manifest, SplitTask::iden, 1,
                           SplitOptions{.iden_test_fraction = 0.25});
  }
};

const Manifest& toy() {
  static const ToyCorpus c;
  return c.manifest;
}

RunConfig toy_config(const fs::path& out) {
  RunConfig cfg;
  cfg.trunk = tiny_trunk(4);
  cfg.train.lr0 = 0.01;
  cfg.train.max_epochs = 3;
  cfg.train.steps_per_epoch = 2;
  cfg.train.n_speakers_per_batch = 4;
  cfg.train.val_fraction = 0.25;
  cfg.train.val_crops = 2;
  cfg.train.seed = 5;
  cfg.train.loss.alpha = 1.0;
  cfg.paths.out_dir = out;
  return cfg;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("each sub-phase changes only its own parameter group") {
  Model net(tiny_trunk(4));
  net.init(1);
  TrainConfig cfg;
  cfg.loss.alpha = 10;
  Optimizers<float> opt(net, cfg.momentum, cfg.weight_decay);
  for (int step = 0; step < 3; ++step) {
    const auto batch = random_batch(4, 4, 10 + step);
    Snapshot trunk = snapshot(net.trunk_parameters()), head = snapshot(net.head_parameters());
    Snapshot env = snapshot(net.env_parameters()), env_buf = snapshot(env_buffers(net));
    int calls = 0;
    train_step(net, opt, batch, cfg, 0.01, 0.01, [&](SubPhase phase) {
      ++calls;
      if (phase == SubPhase::environment) {
        CHECK(snapshot(net.trunk_parameters()) == trunk);
        CHECK(snapshot(net.head_parameters()) == head);
        CHECK(snapshot(net.env_parameters()) != env);
        env = snapshot(net.env_parameters());
        env_buf = snapshot(env_buffers(net));
      } else {
        CHECK(snapshot(net.env_parameters()) == env);
        CHECK(snapshot(env_buffers(net)) == env_buf);
        CHECK(snapshot(net.trunk_parameters()) != trunk);
      }
    });
    CHECK(calls == 2);
  }
}

TEST_CASE("speaker-then-env order keeps isolation") {
  Model net(tiny_trunk(4));
  net.init(2);
  TrainConfig cfg;
  cfg.loss.alpha = 10;
  cfg.order = PhaseOrder::speaker_then_env;
  Optimizers<float> opt(net, cfg.momentum, cfg.weight_decay);
  const auto batch = random_batch(4, 4, 3);
  const Snapshot env = snapshot(net.env_parameters());
  Snapshot trunk;
  std::vector<SubPhase> seen;
  train_step(net, opt, batch, cfg, 0.01, 0.01, [&](SubPhase phase) {
    seen.push_back(phase);
    if (phase == SubPhase::speaker) {
      CHECK(snapshot(net.env_parameters()) == env);
      trunk = snapshot(net.trunk_parameters());
    } else {
      CHECK(snapshot(net.trunk_parameters()) == trunk);
    }
  });
  CHECK(seen == std::vector<SubPhase>{SubPhase::speaker, SubPhase::environment});
}

TEST_CASE("with alpha 0 the environment phase does not affect the trunk trajectory") {
  TrainConfig with, without;
  without.env_phase = false;
  Model a(tiny_trunk(4)), b(tiny_trunk(4));
  a.init(3);
  b.init(3);
  Optimizers<float> oa(a, with.momentum, with.weight_decay), ob(b, without.momentum, without.weight_decay);
  for (int step = 0; step < 4; ++step) {
    const auto batch = random_batch(4, 4, 20 + step);
    const auto ma = train_step(a, oa, batch, with, 0.01, 0.01);
    const auto mb = train_step(b, ob, batch, without, 0.01, 0.01);
    CHECK(ma.ce == mb.ce);
    CHECK(ma.env_loss > 0);
    CHECK(mb.env_loss == 0);
  }
  CHECK(parameter_checksum(a.trunk_parameters()) == parameter_checksum(b.trunk_parameters()));
  CHECK(parameter_checksum(a.head_parameters()) == parameter_checksum(b.head_parameters()));
}

TEST_CASE("non-finite losses carry the batch") {
  Model net(tiny_trunk(4));
  net.init(4);
  TrainConfig cfg;
  Optimizers<float> opt(net, cfg.momentum, cfg.weight_decay);
  auto batch = random_batch(2, 4, 5);
  batch.x.data(0, 0) = std::numeric_limits<float>::quiet_NaN();
  try {
    train_step(net, opt, batch, cfg, 0.01, 0.01);
    FAIL("expected NonFiniteLoss");
  } catch (const NonFiniteLoss& e) {
    CHECK(e.utt_ids() == batch.utt_ids);
  }
}

TEST_CASE("learning-rate schedule and early stopping") {
  TrainConfig cfg;
  CHECK(cfg.lr_at(0) == 1e-3);
  CHECK(cfg.lr_at(10) == doctest::Approx(5.987369392383787e-4).epsilon(1e-12));
  CHECK(cfg.env_lr_at(10) == cfg.lr_at(10));
  cfg.env_lr = 0.02;
  CHECK(cfg.env_lr_at(1) == doctest::Approx(0.019).epsilon(1e-12));

  EarlyStopping es{10};
  const double metrics[] = {0.1, 0.2, 0.5};
  int stop_epoch = -1;
  for (int epoch = 0; epoch < 100; ++epoch) {
    es.update(epoch, epoch < 3 ? metrics[epoch] : 0.5);  // a tie is not an improvement
    if (es.exhausted()) {
      stop_epoch = epoch;
      break;
    }
  }
  CHECK(es.best_epoch == 2);
  CHECK(stop_epoch == 12);
}

TEST_CASE("validation carve-out") {
  const Manifest dev = toy().filter({Split::dev_iden});
  const auto [train, val] = split_validation(dev, 0.25, 9);
  CHECK(train.size() + val.size() == dev.size());
  CHECK(val.speakers() == dev.speakers());
  for (const auto& u : val.utterances()) CHECK(train.find(u.utt_id) == nullptr);
  CHECK(split_validation(dev, 0.25, 9).second == val);
  CHECK(split_validation(dev, 0.0, 9).second.empty());
}

TEST_CASE("batches depend only on seed, epoch and step") {
  const Manifest dev = toy().filter({Split::dev_iden});
  FeatureStore store(toy(), FeatureKind::fbank40, {}, std::nullopt);
  TrainConfig cfg;
  cfg.n_speakers_per_batch = 3;
  cfg.seed = 4;
  BatchSource source(dev, store, cfg, dev.speakers());
  CHECK(source.specs(1, 2) == source.specs(1, 2));
  CHECK(source.specs(1, 2) != source.specs(1, 3));
  std::vector<TripletBatch<float>> serial, threaded;
  {
    Prefetcher p(source, 0, 5, 1, 2);
    for (int i = 0; i < 5; ++i) serial.push_back(p.next());
  }
  {
    Prefetcher p(source, 0, 5, 3, 2);
    for (int i = 0; i < 5; ++i) threaded.push_back(p.next());
  }
  for (int i = 0; i < 5; ++i) {
    CHECK(serial[i].x.data == source.make(0, i).x.data);
    CHECK(threaded[i].x.data == serial[i].x.data);
    CHECK(threaded[i].utt_ids == serial[i].utt_ids);
  }
  const auto b = serial[0];
  CHECK(b.triplets() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(b.labels[i] == b.labels[3 + i]);
    CHECK(b.labels[i] == b.labels[6 + i]);
  }
}

TEST_CASE("hard-negative mining matches brute force") {
  std::mt19937_64 rng(8);
  std::normal_distribution<float> g;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXf e(3, 10);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = g(rng);
    std::vector<int> spk(10);
    for (int i = 0; i < 10; ++i) spk[i] = i % 3;
    double best = 1e300;
    std::pair<int, int> arg{-1, -1};
    for (int i = 0; i < 10; ++i) {
      for (int j = i + 1; j < 10; ++j) {
        if (spk[i] == spk[j]) continue;
        const double d = (e.col(i).cast<double>() - e.col(j).cast<double>()).squaredNorm();
        if (d < best) {
          best = d;
          arg = {i, j};
        }
      }
    }
    const auto mined = mine_hard_negatives(e, spk, 1);
    REQUIRE(mined.size() == 1);
    CHECK(mined[0] == arg);
    const auto all = mine_hard_negatives(e, spk, 1000);
    CHECK(all.size() == 33);  // 45 pairs minus 12 same-speaker ones
  }
}

TEST_CASE("full training is deterministic and resumes exactly") {
  const auto root = envadv::testing::fresh_dir("trainer-runs");
  const RunConfig a = toy_config(root / "a");
  const RunConfig b = toy_config(root / "b");
  const auto ra = train(toy(), a);
  CHECK(ra.epochs_run == 3);
  CHECK(fs::exists(ra.best_checkpoint));

  // Interrupt during the second epoch, before its checkpoint, then resume.
  TrainOptions interrupt;
  interrupt.on_epoch = [](const std::string& line) {
    if (line.find("epoch=1 ") != std::string::npos) throw std::runtime_error("interrupted");
  };
  CHECK_THROWS_AS(train(toy(), b, interrupt), std::runtime_error);
  TrainOptions resume;
  resume.resume = true;
  const auto rb = train(toy(), b, resume);
  CHECK(rb.epochs_run == 3);
  CHECK(slurp(ra.metrics_log) == slurp(rb.metrics_log));
  {
    // The embedded config differs in out_dir only.
    const Checkpoint ca = load_checkpoint(ra.last_checkpoint), cb = load_checkpoint(rb.last_checkpoint);
    CHECK(ca.tensors == cb.tensors);
    CHECK(ca.config_hash == cb.config_hash);
    CHECK(ca.best_epoch == cb.best_epoch);
    CHECK(ca.best_metric == cb.best_metric);
  }

  // A finished run resumes as a no-op.
  const auto rc = train(toy(), b, resume);
  CHECK(rc.epochs_run == 3);
  CHECK(slurp(ra.metrics_log) == slurp(rb.metrics_log));

  RunConfig other = b;
  other.train.lr0 = 0.02;
  CHECK_THROWS_AS(train(toy(), other, resume), Error);

  RunConfig wrong = a;
  wrong.trunk.n_speakers = 5;
  CHECK_THROWS_AS(train(toy(), wrong), Error);

  const Checkpoint ck = load_checkpoint(ra.last_checkpoint);
  CHECK(ck.epoch == 3);
  CHECK(ck.speakers == toy().filter({Split::dev_iden}).speakers());
  CHECK(ck.tensors.count("opt/" + Model(a.trunk).trunk_parameters().front()->name) == 1);
}

TEST_CASE("checkpoints reproduce the forward pass") {
  Model net(tiny_trunk(4));
  net.init(6);
  net.add_verif_head();
  Checkpoint ck;
  export_model(ck, net);
  const auto file = envadv::testing::fresh_dir("ckpt") / "m.ckpt";
  save_checkpoint(file, ck);
  const Model back = import_model<float>(load_checkpoint(file));
  const auto x = random_batch(2, 4, 7).x;
  CHECK(net.embed_infer(x) == back.embed_infer(x));
  const Eigen::MatrixXf s = net.embed_infer(x);
  CHECK(net.verif_infer(s) == back.verif_infer(s));
  CHECK(net.env_infer(s) == back.env_infer(s));
}

TEST_CASE("verification head training freezes the trunk") {
  Model net(tiny_trunk(4));
  net.init(7);
  FeatureStore store(toy(), FeatureKind::fbank40, {}, std::nullopt);
  VerifTrainConfig cfg;
  cfg.pairs_per_batch = 4;
  cfg.hard_negatives = 4;
  cfg.epochs = 2;
  cfg.steps_per_epoch = 3;
  cfg.lr = 0.05;
  const auto trunk = parameter_checksum(net.trunk_parameters());
  const auto head = parameter_checksum(net.head_parameters());
  const auto env = parameter_checksum(net.env_parameters());
  const Snapshot buffers = snapshot(net.all_buffers());
  const auto r = train_verif_head(net, store, toy().filter({Split::dev_iden}), cfg, 1.0);
  CHECK(r.loss.size() == 6);
  CHECK(net.has_verif_head());
  CHECK(parameter_checksum(net.trunk_parameters()) == trunk);
  CHECK(parameter_checksum(net.head_parameters()) == head);
  CHECK(parameter_checksum(net.env_parameters()) == env);
  CHECK(snapshot(net.all_buffers()) == buffers);
}

}  // TEST_SUITE
