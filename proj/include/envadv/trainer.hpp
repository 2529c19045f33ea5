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

#ifndef ENVADV_TRAINER_HPP_
#define ENVADV_TRAINER_HPP_

#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "envadv/checkpoint.hpp"
#include "envadv/config.hpp"
#include "envadv/corpus.hpp"
#include "envadv/feature_store.hpp"
#include "envadv/losses.hpp"
#include "envadv/nets.hpp"
#include "envadv/optim.hpp"

namespace envadv {

/// 3N segments laid out as [anchors | positives | negatives].
template <typename Scalar>
struct TripletBatch {
  nn::FeatureMaps<Scalar> x;
  /// Speaker label of every column.
  std::vector<int> labels;
  /// Source utterance of every column, for diagnostics.
  std::vector<std::string> utt_ids;

  Eigen::Index triplets() const { return static_cast<Eigen::Index>(labels.size() / 3); }
};

struct StepMetrics {
  double env_loss = 0;      // L_e
  double speaker_loss = 0;  // L_s = CE + alpha KL
  double ce = 0;
  double kl = 0;
};

/// Raised when a loss turns non-finite; carries the offending batch.
class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(const std::string& what, std::vector<std::string> utt_ids)
      : Error(what), utt_ids_(std::move(utt_ids)) {}
  const std::vector<std::string>& utt_ids() const { return utt_ids_; }

 private:
  std::vector<std::string> utt_ids_;
};

enum class SubPhase { environment, speaker };

/// Called right after the optimiser step of each sub-phase.
using PhaseObserver = std::function<void(SubPhase)>;

/// Optimisers for the two parameter groups of one model.
template <typename Scalar>
struct Optimizers {
  Sgd<Scalar> speaker;  // trunk + pooling + speaker head
  Sgd<Scalar> env;      // environment network

  Optimizers(SpeakerNet<Scalar>& net, double momentum, double weight_decay)
      : speaker(concat(net.trunk_parameters(), net.head_parameters()), momentum, weight_decay),
        env(net.env_parameters(), momentum, weight_decay) {}

 private:
  static std::vector<nn::Parameter<Scalar>*> concat(std::vector<nn::Parameter<Scalar>*> a,
                                                    const std::vector<nn::Parameter<Scalar>*>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  }
};

namespace detail {

template <typename Scalar>
void check_finite_loss(Scalar v, const char* what, const TripletBatch<Scalar>& batch) {
  if (!std::isfinite(static_cast<double>(v))) throw NonFiniteLoss(std::string(what) + " is not finite", batch.utt_ids);
}

/// Splits [D x 3N] columns into anchor, positive and negative blocks.
template <typename Scalar>
void split3(const LossMat<Scalar>& e, LossMat<Scalar>& a, LossMat<Scalar>& p, LossMat<Scalar>& n) {
  const Eigen::Index k = e.cols() / 3;
  a = e.leftCols(k);
  p = e.middleCols(k, k);
  n = e.rightCols(k);
}

template <typename Scalar>
LossMat<Scalar> join3(const TripletGrad<Scalar>& g) {
  LossMat<Scalar> out(g.a.rows(), 3 * g.a.cols());
  out << g.a, g.p, g.n;
  return out;
}

/// Environment sub-phase on pooled embeddings s: updates env_net only.
template <typename Scalar>
double env_phase(SpeakerNet<Scalar>& net, Sgd<Scalar>& opt, const LossMat<Scalar>& s, const TrainConfig& cfg,
                 double env_lr, const TripletBatch<Scalar>& batch) {
  opt.zero_grad();
  auto& env = net.env_net();
  const LossMat<Scalar> raw = env.forward(nn::FeatureMaps<Scalar>::vectors(s), nn::Mode::training()).data;
  const LossMat<Scalar> e = cfg.loss.normalize_env ? l2_normalize<Scalar>(raw) : raw;
  LossMat<Scalar> a, p, n;
  split3(e, a, p, n);
  TripletGrad<Scalar> g;
  Scalar loss;
  try {
    loss = env_triplet_loss<Scalar>(a, p, n, static_cast<Scalar>(cfg.loss.margin), &g);
  } catch (const Error& err) {
    throw NonFiniteLoss(err.what(), batch.utt_ids);
  }
  check_finite_loss(loss, "environment loss", batch);
  LossMat<Scalar> ge = join3(g);
  if (cfg.loss.normalize_env) ge = l2_normalize_backward<Scalar>(raw, ge);
  env.backward(nn::FeatureMaps<Scalar>::vectors(std::move(ge)));
  opt.step(env_lr);
  return static_cast<double>(loss);
}

}  // namespace detail

/// One adversarial step on a triplet batch.
///
/// The trunk runs forward once. The environment sub-phase trains env_net on
/// the triplet loss over those embeddings (trunk statistics untouched, no
/// gradient into the trunk). The speaker sub-phase then minimises CE plus
/// alpha times the confusion term, backpropagating through env_net (its
/// statistics frozen) into the trunk, and updates trunk, pooling and speaker
/// head. Gradients left on the other group are discarded, so each sub-phase
/// changes only the parameters it owns.
template <typename Scalar>
StepMetrics train_step(SpeakerNet<Scalar>& net, Optimizers<Scalar>& opt, const TripletBatch<Scalar>& batch,
                       const TrainConfig& cfg, double lr, double env_lr, const PhaseObserver& observe = {}) {
  using Maps = nn::FeatureMaps<Scalar>;
  if (batch.labels.size() % 3 != 0 || batch.labels.empty()) throw Error("train_step: batch is not a triplet batch");
  StepMetrics m;
  const bool env_first = cfg.order == PhaseOrder::env_then_speaker;
  const Scalar alpha = static_cast<Scalar>(cfg.loss.alpha);

  opt.speaker.zero_grad();
  LossMat<Scalar> s = net.embed(batch.x, nn::Mode::training());
  if (cfg.env_phase && env_first) {
    m.env_loss = detail::env_phase(net, opt.env, s, cfg, env_lr, batch);
    if (observe) observe(SubPhase::environment);
  }

  // Speaker sub-phase.
  const LossMat<Scalar> logits = net.speaker_head().forward(Maps::vectors(s), nn::Mode::training()).data;
  auto& env = net.env_net();
  const LossMat<Scalar> raw = env.forward(Maps::vectors(s), nn::Mode::frozen_stats()).data;
  const LossMat<Scalar> e = cfg.loss.normalize_env ? l2_normalize<Scalar>(raw) : raw;
  LossMat<Scalar> a, p, n;
  detail::split3(e, a, p, n);
  LossMat<Scalar> g_logits;
  TripletGrad<Scalar> g_env;
  SpeakerPhaseLoss<Scalar> sl;
  try {
    sl = speaker_phase_loss<Scalar>(logits, batch.labels, a, p, n, alpha, &g_logits, &g_env);
  } catch (const Error& err) {
    throw NonFiniteLoss(err.what(), batch.utt_ids);
  }
  detail::check_finite_loss(sl.total, "speaker loss", batch);
  m.speaker_loss = static_cast<double>(sl.total);
  m.ce = static_cast<double>(sl.ce);
  m.kl = static_cast<double>(sl.kl);

  LossMat<Scalar> g_s = net.speaker_head().backward(Maps::vectors(std::move(g_logits))).data;
  if (alpha != Scalar(0)) {
    LossMat<Scalar> ge = detail::join3(g_env);
    if (cfg.loss.normalize_env) ge = l2_normalize_backward<Scalar>(raw, ge);
    g_s += env.backward(Maps::vectors(std::move(ge))).data;
  }
  net.embed_backward(g_s);
  opt.speaker.step(lr);
  opt.env.zero_grad();
  if (observe) observe(SubPhase::speaker);

  if (cfg.env_phase && !env_first) {
    s = net.embed(batch.x, nn::Mode::frozen_stats());
    m.env_loss = detail::env_phase(net, opt.env, s, cfg, env_lr, batch);
    if (observe) observe(SubPhase::environment);
    // The re-forward left caches and gradients on the trunk; nothing steps them.
    opt.speaker.zero_grad();
  }
  return m;
}

/// Carves a seeded validation subset of `fraction` of each speaker's
/// utterances (at least one when the speaker has two or more).
std::pair<Manifest, Manifest> split_validation(const Manifest& dev, double fraction, std::uint64_t seed);

/// Builds triplet batches whose content depends only on (seed, epoch, step).
class BatchSource {
 public:
  BatchSource(const Manifest& train, FeatureStore& store, const TrainConfig& cfg, std::vector<std::string> speakers);

  TripletBatch<float> make(int epoch, int step) const;
  std::vector<TripletSpec> specs(int epoch, int step) const;
  std::size_t eligible_speakers() const { return sampler_.eligible_speakers(); }

 private:
  FeatureStore& store_;
  TripletSampler sampler_;
  int n_speakers_;
  std::uint64_t seed_;
  std::unordered_map<std::string, int> label_of_;
};

/// Builds batches for steps [0, steps) of one epoch on worker threads and
/// hands them out in order; at most `depth` batches wait in the queue.
class Prefetcher {
 public:
  Prefetcher(const BatchSource& source, int epoch, int steps, int workers, int depth);
  ~Prefetcher();
  Prefetcher(const Prefetcher&) = delete;
  Prefetcher& operator=(const Prefetcher&) = delete;

  TripletBatch<float> next();

 private:
  void work();

  const BatchSource& source_;
  int epoch_;
  int steps_;
  int depth_;
  int claimed_ = 0;
  int consumed_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
  std::map<int, TripletBatch<float>> ready_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::vector<std::thread> threads_;
};

/// Stop once `patience` consecutive epochs fail to improve the best metric.
struct EarlyStopping {
  int patience = 10;
  double best = -1.0;
  int best_epoch = -1;
  int since_improve = 0;

  /// Records the metric of `epoch`; true when it is a new best.
  bool update(int epoch, double metric);
  bool exhausted() const { return since_improve >= patience; }
};

struct TrainOptions {
  bool resume = false;
  /// Log every step (otherwise epochs only).
  bool log_steps = true;
  /// Called after every epoch with the epoch line; used by the CLI table.
  std::function<void(const std::string&)> on_epoch;
};

struct TrainResult {
  int epochs_run = 0;
  int best_epoch = -1;
  double best_metric = 0;
  bool stopped_early = false;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path metrics_log;
};

/// Full training run on the dev split of `manifest`. Writes best.ckpt,
/// last.ckpt and metrics.log under cfg.paths.out_dir. The speaker-label list is
/// the sorted dev speaker set, and trunk.n_speakers must match its size.
TrainResult train(const Manifest& manifest, const RunConfig& cfg, const TrainOptions& options = {});

/// Indices (i, j), i < j, of the `k` closest different-speaker pairs among the
/// columns of `emb`, ordered by distance (ties by index).
std::vector<std::pair<int, int>> mine_hard_negatives(const Eigen::MatrixXf& emb, const std::vector<int>& speakers,
                                                     int k);

struct VerifTrainResult {
  /// Mean distance of the positive pairs per step, before the update.
  std::vector<double> positive_distance;
  std::vector<double> loss;
};

/// Trains the verification head on top of a frozen trunk with the contrastive
/// loss; adds an identity-initialised head when the model has none.
VerifTrainResult train_verif_head(SpeakerNet<float>& net, FeatureStore& store, const Manifest& train,
                                  const VerifTrainConfig& cfg, double contrastive_margin);

}  // namespace envadv

#endif  // ENVADV_TRAINER_HPP_
