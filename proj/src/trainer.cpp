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

#include "envadv/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "envadv/eval.hpp"

namespace envadv {
namespace fs = std::filesystem;
using nlohmann::json;

std::pair<Manifest, Manifest> split_validation(const Manifest& dev, double fraction, std::uint64_t seed) {
  std::map<std::string, std::vector<const UtteranceRef*>> by_speaker;
  for (const auto& u : dev.utterances()) by_speaker[u.speaker_id].push_back(&u);
  std::vector<UtteranceRef> train, val;
  std::uint64_t index = 0;
  for (auto& [speaker, utts] : by_speaker) {
    Rng rng(derive_seed(seed, "validation", index++));
    std::shuffle(utts.begin(), utts.end(), rng);
    std::size_t k = 0;
    if (fraction > 0 && utts.size() >= 2) {
      k = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(utts.size()))),
                                  1, utts.size() - 1);
    }
    for (std::size_t i = 0; i < utts.size(); ++i) (i < k ? val : train).push_back(*utts[i]);
  }
  return {Manifest(std::move(train)), Manifest(std::move(val))};
}

// ---------------------------------------------------------------------------
// Batches

BatchSource::BatchSource(const Manifest& train, FeatureStore& store, const TrainConfig& cfg,
                         std::vector<std::string> speakers)
    : store_(store),
      sampler_(train, store.dsp().segment_s,
               cfg.grid_offsets ? static_cast<double>(store.dsp().hop_length) / store.dsp().sample_rate : 0.0),
      n_speakers_(cfg.n_speakers_per_batch),
      seed_(cfg.seed) {
  if (sampler_.eligible_speakers() == 0) {
    throw Error("no eligible speakers: every training speaker needs two videos with utterances of at least " +
                std::to_string(store.dsp().segment_s) + " s");
  }
  for (std::size_t i = 0; i < speakers.size(); ++i) label_of_[speakers[i]] = static_cast<int>(i);
}

std::vector<TripletSpec> BatchSource::specs(int epoch, int step) const {
  Rng rng(derive_seed(seed_, "batch", static_cast<std::uint64_t>(epoch) * 1000000ULL + static_cast<std::uint64_t>(step)));
  return sampler_.sample(n_speakers_, rng);
}

TripletBatch<float> BatchSource::make(int epoch, int step) const {
  const auto triplets = specs(epoch, step);
  std::vector<FeatureSegment<float>> segments;
  TripletBatch<float> b;
  segments.reserve(3 * triplets.size());
  for (int part = 0; part < 3; ++part) {
    for (const auto& t : triplets) {
      const SegmentRef& ref = part == 0 ? t.anchor : part == 1 ? t.positive : t.negative;
      segments.push_back(store_.segment(ref.utt_id, ref.offset_s));
      const auto it = label_of_.find(t.speaker_id);
      if (it == label_of_.end()) throw Error("speaker '" + t.speaker_id + "' has no label");
      b.labels.push_back(it->second);
      b.utt_ids.push_back(ref.utt_id);
    }
  }
  b.x = pack_segments(segments);
  return b;
}

Prefetcher::Prefetcher(const BatchSource& source, int epoch, int steps, int workers, int depth)
    : source_(source), epoch_(epoch), steps_(steps), depth_(std::max(1, depth)) {
  for (int i = 0; i < std::max(1, workers); ++i) threads_.emplace_back([this] { work(); });
}

Prefetcher::~Prefetcher() {
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void Prefetcher::work() {
  for (;;) {
    int step;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [&] { return stop_ || claimed_ >= steps_ || claimed_ < consumed_ + depth_; });
      if (stop_ || claimed_ >= steps_) return;
      step = claimed_++;
    }
    try {
      TripletBatch<float> b = source_.make(epoch_, step);
      std::lock_guard lock(mutex_);
      ready_.emplace(step, std::move(b));
    } catch (...) {
      std::lock_guard lock(mutex_);
      if (!error_) error_ = std::current_exception();
    }
    cv_.notify_all();
  }
}

TripletBatch<float> Prefetcher::next() {
  std::unique_lock lock(mutex_);
  if (consumed_ >= steps_) throw Error("prefetcher exhausted");
  cv_.wait(lock, [&] { return error_ || ready_.count(consumed_); });
  if (error_) std::rethrow_exception(error_);
  auto node = ready_.extract(consumed_);
  ++consumed_;
  lock.unlock();
  cv_.notify_all();
  return std::move(node.mapped());
}

bool EarlyStopping::update(int epoch, double metric) {
  if (metric > best) {
    best = metric;
    best_epoch = epoch;
    since_improve = 0;
    return true;
  }
  ++since_improve;
  return false;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::string fmt(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

/// Value of `key=` in a log line, or -1.
int epoch_of(const std::string& line) {
  const auto pos = line.find(" epoch=");
  if (pos == std::string::npos) return -1;
  return std::atoi(line.c_str() + pos + 7);
}

/// Keeps the log lines of epochs before `epoch` (resume discards the rest).
void truncate_log(const fs::path& file, int epoch) {
  std::vector<std::string> keep;
  {
    std::ifstream in(file);
    for (std::string line; std::getline(in, line);) {
      if (epoch_of(line) < epoch) keep.push_back(line);
    }
  }
  std::ofstream out(file, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

struct Session {
  Model net;
  Optimizers<float> opt;
  Session(const TrunkConfig& t, const TrainConfig& c) : net(t), opt(net, c.momentum, c.weight_decay) {}
};

Checkpoint make_checkpoint(Session& s, const RunConfig& cfg, const std::vector<std::string>& speakers,
                           std::uint64_t dsp_hash, int next_epoch, const EarlyStopping& es, bool finished) {
  Checkpoint ck;
  ck.dsp_hash = dsp_hash;
  ck.config_hash = cfg.hash();
  ck.epoch = next_epoch;
  ck.best_metric = es.best;
  ck.best_epoch = es.best_epoch;
  ck.epochs_since_improve = es.since_improve;
  ck.speakers = speakers;
  ck.extra_json = json{{"finished", finished}, {"config", json::parse(cfg.to_json())}}.dump();
  export_model(ck, s.net);
  return ck;
}

}  // namespace

TrainResult train(const Manifest& manifest, const RunConfig& cfg, const TrainOptions& options) {
  const TrainConfig& tc = cfg.train;
  tc.validate();
  const Manifest dev = manifest.filter({Split::dev_iden, Split::dev_verif});
  if (dev.empty()) throw Error("manifest has no dev split; run prepare first");
  const std::vector<std::string> speakers = dev.speakers();
  if (cfg.trunk.n_speakers != static_cast<int>(speakers.size())) {
    throw Error("trunk.n_speakers is " + std::to_string(cfg.trunk.n_speakers) + " but the dev split has " +
                std::to_string(speakers.size()) + " speakers");
  }
  auto [train_set, val_set] = split_validation(dev, tc.val_fraction, tc.seed);

  FeatureStore store(manifest, cfg.trunk.feature_kind(), cfg.dsp);
  BatchSource source(train_set, store, tc, speakers);
  const int steps = tc.steps_per_epoch > 0
                        ? tc.steps_per_epoch
                        : static_cast<int>((train_set.size() + 3 * tc.n_speakers_per_batch - 1) /
                                           (3 * static_cast<std::size_t>(tc.n_speakers_per_batch)));

  TrainResult result;
  fs::create_directories(cfg.paths.out_dir);
  result.best_checkpoint = cfg.paths.out_dir / "best.ckpt";
  result.last_checkpoint = cfg.paths.out_dir / "last.ckpt";
  result.metrics_log = cfg.paths.out_dir / "metrics.log";

  Session s(cfg.trunk, tc);
  EarlyStopping es{tc.patience};
  int start = 0;
  if (options.resume && fs::exists(result.last_checkpoint)) {
    const Checkpoint ck = load_checkpoint(result.last_checkpoint);
    if (ck.config_hash != cfg.hash()) {
      throw Error("cannot resume: " + result.last_checkpoint.string() + " was written with config " +
                  hex64(ck.config_hash) + ", current config is " + hex64(cfg.hash()));
    }
    import_tensors(ck, s.net.all_parameters());
    import_tensors(ck, s.net.all_buffers());
    import_tensors(ck, s.opt.speaker.state());
    import_tensors(ck, s.opt.env.state());
    start = ck.epoch;
    es.best = ck.best_metric;
    es.best_epoch = ck.best_epoch;
    es.since_improve = ck.epochs_since_improve;
    truncate_log(result.metrics_log, start);
    result.epochs_run = start;
    result.best_epoch = es.best_epoch;
    result.best_metric = es.best;
    if (json::parse(ck.extra_json).value("finished", false)) {
      result.stopped_early = es.exhausted();
      return result;
    }
  } else {
    s.net.init(tc.seed);
    std::ofstream(result.metrics_log, std::ios::trunc);
  }
  std::ofstream log(result.metrics_log, std::ios::app);
  if (!log) throw Error("cannot write " + result.metrics_log.string());

  for (int epoch = start; epoch < tc.max_epochs; ++epoch) {
    const double lr = tc.lr_at(epoch);
    const double env_lr = tc.env_lr_at(epoch);
    double sum_e = 0, sum_s = 0, sum_ce = 0, sum_kl = 0;
    {
      Prefetcher prefetch(source, epoch, steps, tc.workers, tc.prefetch);
      for (int step = 0; step < steps; ++step) {
        const TripletBatch<float> batch = prefetch.next();
        StepMetrics m;
        try {
          m = train_step(s.net, s.opt, batch, tc, lr, env_lr);
        } catch (const NonFiniteLoss& e) {
          const fs::path dump = cfg.paths.out_dir / "nonfinite-batch.txt";
          std::ofstream out(dump);
          out << "epoch=" << epoch << " step=" << step << '\n';
          for (const auto& id : e.utt_ids()) out << id << '\n';
          throw Error(std::string(e.what()) + " at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                      "; batch utterances written to " + dump.string());
        }
        sum_e += m.env_loss;
        sum_s += m.speaker_loss;
        sum_ce += m.ce;
        sum_kl += m.kl;
        if (options.log_steps) {
          log << "kind=step epoch=" << epoch << " step=" << step << " L_e=" << fmt(m.env_loss)
              << " L_s=" << fmt(m.speaker_loss) << " CE=" << fmt(m.ce) << " KL=" << fmt(m.kl) << " lr=" << fmt(lr)
              << " env_lr=" << fmt(env_lr) << '\n';
        }
      }
    }
    double val = 0;
    if (!val_set.empty()) {
      val = eval_identification(s.net, store, val_set, speakers, tc.val_crops, tc.workers).top1;
    }
    const bool improved = val_set.empty() ? (es.update(epoch, epoch), true) : es.update(epoch, val);
    const bool finished = (!val_set.empty() && es.exhausted()) || epoch + 1 == tc.max_epochs;
    const double inv = 1.0 / steps;
    std::ostringstream line;
    line << "kind=epoch epoch=" << epoch << " L_e=" << fmt(sum_e * inv) << " L_s=" << fmt(sum_s * inv)
         << " CE=" << fmt(sum_ce * inv) << " KL=" << fmt(sum_kl * inv) << " lr=" << fmt(lr) << " env_lr=" << fmt(env_lr)
         << " val_top1=" << fmt(val) << " best_epoch=" << es.best_epoch << " since_improve=" << es.since_improve;
    log << line.str() << '\n';
    log.flush();
    if (options.on_epoch) options.on_epoch(line.str());

    const Checkpoint ck = make_checkpoint(s, cfg, speakers, store.dsp_hash(), epoch + 1, es, finished);
    if (improved) save_checkpoint(result.best_checkpoint, ck);
    Checkpoint last = ck;
    export_tensors(last, s.opt.speaker.state());
    export_tensors(last, s.opt.env.state());
    save_checkpoint(result.last_checkpoint, last);
    result.epochs_run = epoch + 1;
    if (!val_set.empty() && es.exhausted()) {
      result.stopped_early = true;
      break;
    }
  }
  result.best_epoch = es.best_epoch;
  result.best_metric = es.best;
  return result;
}

// ---------------------------------------------------------------------------
// Verification head

std::vector<std::pair<int, int>> mine_hard_negatives(const Eigen::MatrixXf& emb, const std::vector<int>& speakers,
                                                     int k) {
  if (static_cast<std::size_t>(emb.cols()) != speakers.size()) throw Error("mine_hard_negatives: label count mismatch");
  struct Cand {
    double d;
    int i, j;
  };
  std::vector<Cand> cands;
  const Eigen::MatrixXd e = emb.cast<double>();
  for (int i = 0; i < e.cols(); ++i) {
    for (int j = i + 1; j < e.cols(); ++j) {
      if (speakers[static_cast<std::size_t>(i)] != speakers[static_cast<std::size_t>(j)]) {
        cands.push_back({(e.col(i) - e.col(j)).squaredNorm(), i, j});
      }
    }
  }
  const std::size_t keep = std::min(cands.size(), static_cast<std::size_t>(std::max(0, k)));
  auto less = [](const Cand& a, const Cand& b) { return std::tie(a.d, a.i, a.j) < std::tie(b.d, b.i, b.j); };
  std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), less);
  std::vector<std::pair<int, int>> out;
  for (std::size_t c = 0; c < keep; ++c) out.emplace_back(cands[c].i, cands[c].j);
  return out;
}

VerifTrainResult train_verif_head(SpeakerNet<float>& net, FeatureStore& store, const Manifest& train,
                                  const VerifTrainConfig& cfg, double contrastive_margin) {
  using Maps = nn::FeatureMaps<float>;
  if (cfg.pairs_per_batch < 1) throw Error("verif.pairs_per_batch must be positive");
  const double seg = store.dsp().segment_s;
  std::map<std::string, std::vector<const UtteranceRef*>> by_speaker;
  for (const auto& u : train.utterances()) {
    if (u.duration_s + 1e-9 >= seg) by_speaker[u.speaker_id].push_back(&u);
  }
  std::vector<std::vector<const UtteranceRef*>> pools;
  for (auto& [id, utts] : by_speaker) {
    if (utts.size() >= 2) pools.push_back(utts);
  }
  if (pools.size() < 2) throw Error("verification-head training needs two speakers with two usable utterances each");
  if (!net.has_verif_head()) net.add_verif_head();
  auto& head = net.verif_head();
  Sgd<float> opt(net.verif_parameters(), cfg.momentum);
  const double hop = static_cast<double>(store.dsp().hop_length) / store.dsp().sample_rate;
  auto offset = [&](const UtteranceRef& u, Rng& rng) {
    const auto last = static_cast<long>(std::floor((u.duration_s - seg) / hop + 1e-9));
    return hop * static_cast<double>(std::uniform_int_distribution<long>(0, std::max(0L, last))(rng));
  };

  VerifTrainResult result;
  const int p = cfg.pairs_per_batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      Rng rng(derive_seed(cfg.seed, "verif", static_cast<std::uint64_t>(epoch) * 1000000ULL + static_cast<std::uint64_t>(step)));
      std::vector<FeatureSegment<float>> first, second;
      std::vector<int> labels(2 * static_cast<std::size_t>(p));
      for (int i = 0; i < p; ++i) {
        const auto sp = std::uniform_int_distribution<std::size_t>(0, pools.size() - 1)(rng);
        const auto& pool = pools[sp];
        const auto a = std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng);
        auto b = std::uniform_int_distribution<std::size_t>(0, pool.size() - 2)(rng);
        if (b >= a) ++b;
        first.push_back(store.segment(pool[a]->utt_id, offset(*pool[a], rng)));
        second.push_back(store.segment(pool[b]->utt_id, offset(*pool[b], rng)));
        labels[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(p + i)] = static_cast<int>(sp);
      }
      first.insert(first.end(), second.begin(), second.end());
      const Eigen::MatrixXf s = net.embed_infer(pack_segments(first));
      const Eigen::MatrixXf h = head.forward(Maps::vectors(s), nn::Mode::training()).data;
      const Eigen::MatrixXf y = cfg.normalize ? l2_normalize<float>(h) : h;
      const auto negatives = mine_hard_negatives(y, labels, cfg.hard_negatives);

      const Eigen::Index m = p + static_cast<Eigen::Index>(negatives.size());
      Eigen::MatrixXf x1(y.rows(), m), x2(y.rows(), m);
      std::vector<int> same(static_cast<std::size_t>(m), 0);
      std::vector<std::pair<int, int>> idx;
      for (int i = 0; i < p; ++i) idx.emplace_back(i, p + i);
      idx.insert(idx.end(), negatives.begin(), negatives.end());
      double pos = 0;
      for (Eigen::Index c = 0; c < m; ++c) {
        x1.col(c) = y.col(idx[static_cast<std::size_t>(c)].first);
        x2.col(c) = y.col(idx[static_cast<std::size_t>(c)].second);
        if (c < p) {
          same[static_cast<std::size_t>(c)] = 1;
          pos += (x1.col(c) - x2.col(c)).norm();
        }
      }
      Eigen::MatrixXf g1, g2;
      const float loss = contrastive_loss<float>(x1, x2, same, static_cast<float>(contrastive_margin), &g1, &g2);
      if (!std::isfinite(loss)) throw Error("verification-head loss is not finite");
      Eigen::MatrixXf gy = Eigen::MatrixXf::Zero(y.rows(), y.cols());
      for (Eigen::Index c = 0; c < m; ++c) {
        gy.col(idx[static_cast<std::size_t>(c)].first) += g1.col(c);
        gy.col(idx[static_cast<std::size_t>(c)].second) += g2.col(c);
      }
      const Eigen::MatrixXf gh = cfg.normalize ? l2_normalize_backward<float>(h, gy) : gy;
      opt.zero_grad();
      head.backward(Maps::vectors(gh));
      opt.step(cfg.lr);
      result.positive_distance.push_back(pos / p);
      result.loss.push_back(loss);
    }
  }
  return result;
}

}  // namespace envadv
