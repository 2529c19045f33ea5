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

#ifndef ENVADV_EVAL_HPP_
#define ENVADV_EVAL_HPP_

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "envadv/config.hpp"
#include "envadv/corpus.hpp"
#include "envadv/feature_store.hpp"
#include "envadv/nets.hpp"

namespace envadv {

using Model = SpeakerNet<float>;

/// Pooled trunk embeddings of `n_crops` evenly spaced 2 s crops, [D x n_crops].
Eigen::MatrixXf embed_utterance(const Model& net, FeatureStore& store, const std::string& utt_id, int n_crops);

/// Crop embeddings for many utterances, computed by `workers` threads over a
/// read-only model. Results do not depend on the worker count.
std::unordered_map<std::string, Eigen::MatrixXf> embed_utterances(const Model& net, FeatureStore& store,
                                                                  const std::vector<std::string>& utt_ids,
                                                                  int n_crops, int workers = 1);

/// Mean over all crop pairs of the distance between columns of a and b.
double score_pair(const Eigen::MatrixXf& a, const Eigen::MatrixXf& b,
                  DistanceMetric metric = DistanceMetric::euclidean_l2);

/// Embeds both utterances (through the verification head when present) and
/// scores them. Throws if either is shorter than one crop.
double score_pair(const Model& net, FeatureStore& store, const std::string& utt_a, const std::string& utt_b,
                  const EvalConfig& cfg = {}, bool use_verif_head = true);

struct IdentResult {
  double top1 = 0;
  double top5 = 0;
  std::size_t n = 0;
  std::size_t skipped = 0;
};

/// 1 if the true class is among the k largest logits (ties count against it).
bool in_top_k(const Eigen::Ref<const Eigen::VectorXf>& logits, int label, int k);

/// Logits are averaged over the crops before ranking. `speakers` is the
/// model's label list; utterances shorter than one crop are skipped.
IdentResult eval_identification(const Model& net, FeatureStore& store, const Manifest& test,
                                const std::vector<std::string>& speakers, int n_crops = 10, int workers = 1);

/// Scores are distances: a trial is accepted when score <= threshold.
/// Sweeps every distinct score and interpolates linearly between the two
/// operating points where FRR - FAR changes sign.
double compute_eer(const std::vector<double>& scores, const std::vector<int>& labels);

std::vector<double> score_trials(const Model& net, FeatureStore& store, const TrialList& trials,
                                 const EvalConfig& cfg = {}, bool use_verif_head = true);

double eval_env_probe(const Model& net, FeatureStore& store, const TrialList& trials, const EvalConfig& cfg = {});

/// Fixed channel applied to test waveforms: FIR filter, then white noise at
/// `snr_db` relative to the filtered signal. A single unit tap and infinite
/// SNR leave waveforms untouched.
struct PerturbSpec {
  std::vector<float> fir = {1.0f};
  double snr_db = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;

  bool is_identity() const;
};

/// Windowed-sinc lowpass, odd tap count.
std::vector<float> lowpass_fir(double cutoff_hz, int taps = 101, int sample_rate = 16000);

/// Applies the perturbation in place; noise is seeded from (seed, utt_id).
void apply_perturbation(const PerturbSpec& spec, const std::string& utt_id, std::vector<float>& samples);

struct PerturbResult {
  double clean_eer = 0;
  double perturbed_eer = 0;
  double degradation() const { return perturbed_eer - clean_eer; }
};

PerturbResult channel_perturb_eval(const Model& net, const Manifest& manifest, FeatureKind kind,
                                   const DspConfig& dsp, const TrialList& trials, const PerturbSpec& spec,
                                   const EvalConfig& cfg = {}, bool use_verif_head = true);

enum class EvalTask { iden, verif, env_probe, perturb };

std::string_view to_string(EvalTask task);
EvalTask parse_eval_task(std::string_view text);

struct EvalReport {
  EvalTask task = EvalTask::verif;
  double top1 = 0;
  double top5 = 0;
  double eer = 0;
  std::size_t n_trials = 0;
  std::uint64_t config_hash = 0;
  /// Additional named metrics, e.g. clean and perturbed EER.
  std::map<std::string, double> extra;

  std::string key_values() const;
  std::string table() const;
};

/// `index label score` lines, scores printed with 17 significant digits.
void save_scores(const std::filesystem::path& file, const std::vector<int>& labels,
                 const std::vector<double>& scores);
void load_scores(const std::filesystem::path& file, std::vector<int>& labels, std::vector<double>& scores);

}  // namespace envadv

#endif  // ENVADV_EVAL_HPP_
