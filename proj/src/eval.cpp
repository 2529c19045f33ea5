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

#include "envadv/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <thread>

namespace envadv {
namespace fs = std::filesystem;

namespace {

constexpr Eigen::Index kMaxSegmentsPerForward = 64;

/// Runs fn(i) for i in [0, n) on `workers` threads; rethrows the first error.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < std::max(1, workers) && static_cast<std::size_t>(w) < n; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<double> offsets_for(const UtteranceRef& u, const DspConfig& dsp, int n_crops) {
  return evenly_spaced_offsets(u.duration_s, dsp.segment_s, n_crops);
}

}  // namespace

Eigen::MatrixXf embed_utterance(const Model& net, FeatureStore& store, const std::string& utt_id, int n_crops) {
  return embed_utterances(net, store, {utt_id}, n_crops, 1).at(utt_id);
}

std::unordered_map<std::string, Eigen::MatrixXf> embed_utterances(const Model& net, FeatureStore& store,
                                                                  const std::vector<std::string>& utt_ids,
                                                                  int n_crops, int workers) {
  if (n_crops < 1) throw Error("n_crops must be positive");
  for (const auto& id : utt_ids) {
    const auto& u = store.manifest().at(id);
    if (u.duration_s + 1e-9 < store.dsp().segment_s) {
      throw Error("utterance '" + id + "' lasts " + std::to_string(u.duration_s) + " s, shorter than the " +
                  std::to_string(store.dsp().segment_s) + " s crop");
    }
  }
  // Fixed chunking keeps results independent of the worker count.
  const std::size_t per_chunk = std::max<std::size_t>(1, kMaxSegmentsPerForward / n_crops);
  const std::size_t chunks = (utt_ids.size() + per_chunk - 1) / per_chunk;
  std::unordered_map<std::string, Eigen::MatrixXf> out;
  std::mutex out_mutex;
  parallel_for(chunks, workers, [&](std::size_t c) {
    const std::size_t begin = c * per_chunk;
    const std::size_t end = std::min(utt_ids.size(), begin + per_chunk);
    // Crops that coincide (utterances close to one crop long) are embedded once
    // and shared, so equal crops map to bitwise-equal columns.
    std::vector<FeatureSegment<float>> segments;
    std::vector<std::vector<Eigen::Index>> column_of(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      const auto& u = store.manifest().at(utt_ids[i]);
      double last = -1;
      for (double offset : offsets_for(u, store.dsp(), n_crops)) {
        if (column_of[i - begin].empty() || offset != last) {
          segments.push_back(store.segment(u.utt_id, offset));
          last = offset;
        }
        column_of[i - begin].push_back(static_cast<Eigen::Index>(segments.size()) - 1);
      }
    }
    const Eigen::MatrixXf s = net.embed_infer(pack_segments(segments));
    std::lock_guard lock(out_mutex);
    for (std::size_t i = begin; i < end; ++i) {
      const auto& cols = column_of[i - begin];
      Eigen::MatrixXf e(s.rows(), static_cast<Eigen::Index>(cols.size()));
      for (std::size_t k = 0; k < cols.size(); ++k) e.col(static_cast<Eigen::Index>(k)) = s.col(cols[k]);
      out[utt_ids[i]] = std::move(e);
    }
  });
  return out;
}

double score_pair(const Eigen::MatrixXf& a, const Eigen::MatrixXf& b, DistanceMetric metric) {
  if (a.rows() != b.rows() || a.cols() == 0 || b.cols() == 0) throw Error("score_pair: incompatible embeddings");
  Eigen::MatrixXd x = a.cast<double>();
  Eigen::MatrixXd y = b.cast<double>();
  if (metric == DistanceMetric::euclidean_l2) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (x.col(j).norm() > 0) x.col(j).normalize();
    }
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      if (y.col(j).norm() > 0) y.col(j).normalize();
    }
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    for (Eigen::Index j = 0; j < y.cols(); ++j) total += (x.col(i) - y.col(j)).norm();
  }
  return total / static_cast<double>(x.cols() * y.cols());
}

double score_pair(const Model& net, FeatureStore& store, const std::string& utt_a, const std::string& utt_b,
                  const EvalConfig& cfg, bool use_verif_head) {
  Eigen::MatrixXf a = embed_utterance(net, store, utt_a, cfg.n_crops);
  Eigen::MatrixXf b = embed_utterance(net, store, utt_b, cfg.n_crops);
  if (use_verif_head && net.has_verif_head()) {
    a = net.verif_infer(a);
    b = net.verif_infer(b);
  }
  return score_pair(a, b, cfg.metric);
}

bool in_top_k(const Eigen::Ref<const Eigen::VectorXf>& logits, int label, int k) {
  if (label < 0 || label >= logits.size()) throw Error("in_top_k: label out of range");
  const float target = logits[label];
  Eigen::Index ahead = 0;
  for (Eigen::Index c = 0; c < logits.size(); ++c) {
    if (c != label && logits[c] >= target) ++ahead;
  }
  return ahead < k;
}

IdentResult eval_identification(const Model& net, FeatureStore& store, const Manifest& test,
                                const std::vector<std::string>& speakers, int n_crops, int workers) {
  std::unordered_map<std::string, int> label_of;
  for (std::size_t i = 0; i < speakers.size(); ++i) label_of[speakers[i]] = static_cast<int>(i);
  IdentResult r;
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::size_t unknown = 0;
  for (const auto& u : test.utterances()) {
    if (u.duration_s + 1e-9 < store.dsp().segment_s) {
      ++r.skipped;
      continue;
    }
    const auto it = label_of.find(u.speaker_id);
    if (it == label_of.end()) {
      ++unknown;
      ++r.skipped;
      continue;
    }
    ids.push_back(u.utt_id);
    labels.push_back(it->second);
  }
  if (r.skipped > unknown) warn(std::to_string(r.skipped - unknown) + " utterances shorter than one crop skipped");
  if (unknown) warn(std::to_string(unknown) + " utterances of speakers unknown to the model skipped");
  if (ids.empty()) throw Error("identification: no scorable test utterances");
  const auto emb = embed_utterances(net, store, ids, n_crops, workers);
  std::size_t hit1 = 0, hit5 = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Eigen::MatrixXf logits = net.speaker_logits_infer(emb.at(ids[i]));
    const Eigen::VectorXf mean = logits.rowwise().mean();
    hit1 += in_top_k(mean, labels[i], 1);
    hit5 += in_top_k(mean, labels[i], 5);
  }
  r.n = ids.size();
  r.top1 = static_cast<double>(hit1) / static_cast<double>(r.n);
  r.top5 = static_cast<double>(hit5) / static_cast<double>(r.n);
  return r;
}

double compute_eer(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw Error("compute_eer: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::size_t n_target = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw Error("compute_eer: non-finite score at trial " + std::to_string(i));
    if (labels[i] != 0 && labels[i] != 1) throw Error("compute_eer: labels must be 0 or 1");
    order[i] = i;
    n_target += labels[i] == 1;
  }
  const std::size_t n_nontarget = scores.size() - n_target;
  if (n_target == 0 || n_nontarget == 0) throw Error("compute_eer: need both target and non-target trials");
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double prev_far = 0.0, prev_frr = 1.0;
  std::size_t accepted_nontarget = 0, accepted_target = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double tau = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == tau; ++i) {
      if (labels[order[i]] == 1) {
        ++accepted_target;
      } else {
        ++accepted_nontarget;
      }
    }
    const double far = static_cast<double>(accepted_nontarget) / static_cast<double>(n_nontarget);
    const double frr = static_cast<double>(n_target - accepted_target) / static_cast<double>(n_target);
    const double d = frr - far;
    if (d <= 0.0) {
      const double prev_d = prev_frr - prev_far;
      if (d == 0.0) return far;
      const double t = prev_d / (prev_d - d);
      return prev_far + t * (far - prev_far);
    }
    prev_far = far;
    prev_frr = frr;
  }
  return prev_far;  // unreachable: the last operating point has FRR = 0
}

std::vector<double> score_trials(const Model& net, FeatureStore& store, const TrialList& trials,
                                 const EvalConfig& cfg, bool use_verif_head) {
  std::set<std::string> unique;
  for (const auto& t : trials.pairs) {
    unique.insert(t.utt_a);
    unique.insert(t.utt_b);
  }
  auto emb = embed_utterances(net, store, {unique.begin(), unique.end()}, cfg.n_crops, cfg.workers);
  if (use_verif_head && net.has_verif_head()) {
    for (auto& [id, e] : emb) e = net.verif_infer(e);
  }
  std::vector<double> scores(trials.pairs.size());
  for (std::size_t i = 0; i < trials.pairs.size(); ++i) {
    scores[i] = score_pair(emb.at(trials.pairs[i].utt_a), emb.at(trials.pairs[i].utt_b), cfg.metric);
  }
  return scores;
}

namespace {
std::vector<int> labels_of(const TrialList& trials) {
  std::vector<int> labels;
  for (const auto& t : trials.pairs) labels.push_back(t.label);
  return labels;
}
}  // namespace

double eval_env_probe(const Model& net, FeatureStore& store, const TrialList& trials, const EvalConfig& cfg) {
  for (const auto& t : trials.pairs) {
    const auto& a = store.manifest().at(t.utt_a);
    const auto& b = store.manifest().at(t.utt_b);
    if (a.speaker_id != b.speaker_id) {
      throw Error("environment probe trial pairs different speakers: " + t.utt_a + " / " + t.utt_b);
    }
  }
  return compute_eer(score_trials(net, store, trials, cfg, cfg.env_probe_verif_head), labels_of(trials));
}

bool PerturbSpec::is_identity() const {
  return fir.size() == 1 && fir[0] == 1.0f && std::isinf(snr_db) && snr_db > 0;
}

std::vector<float> lowpass_fir(double cutoff_hz, int taps, int sample_rate) {
  if (taps < 1 || taps % 2 == 0) throw Error("lowpass_fir: tap count must be odd and positive");
  if (!(cutoff_hz > 0 && cutoff_hz < sample_rate / 2.0)) throw Error("lowpass_fir: cutoff outside (0, Nyquist)");
  const double fc = cutoff_hz / sample_rate;
  const int half = taps / 2;
  std::vector<float> h(static_cast<std::size_t>(taps));
  double sum = 0.0;
  for (int n = -half; n <= half; ++n) {
    const double sinc = n == 0 ? 2.0 * fc : std::sin(2.0 * std::numbers::pi * fc * n) / (std::numbers::pi * n);
    const double w = half == 0 ? 1.0 : 0.54 + 0.46 * std::cos(std::numbers::pi * n / half);
    h[static_cast<std::size_t>(n + half)] = static_cast<float>(sinc * w);
    sum += sinc * w;
  }
  for (float& v : h) v = static_cast<float>(v / sum);
  return h;
}

void apply_perturbation(const PerturbSpec& spec, const std::string& utt_id, std::vector<float>& samples) {
  if (spec.is_identity()) return;
  if (spec.fir.empty()) throw Error("perturbation FIR is empty");
  if (!(spec.fir.size() == 1 && spec.fir[0] == 1.0f)) samples = fir_filter(samples, spec.fir);
  if (std::isinf(spec.snr_db) && spec.snr_db > 0) return;
  double power = 0.0;
  for (float v : samples) power += static_cast<double>(v) * v;
  power /= static_cast<double>(std::max<std::size_t>(1, samples.size()));
  const double sigma = std::sqrt(power * std::pow(10.0, -spec.snr_db / 10.0));
  Rng rng(derive_seed(spec.seed, utt_id));
  std::normal_distribution<double> gauss(0.0, sigma);
  for (float& v : samples) v = static_cast<float>(v + gauss(rng));
}

PerturbResult channel_perturb_eval(const Model& net, const Manifest& manifest, FeatureKind kind,
                                   const DspConfig& dsp, const TrialList& trials, const PerturbSpec& spec,
                                   const EvalConfig& cfg, bool use_verif_head) {
  const std::vector<int> labels = labels_of(trials);
  PerturbResult r;
  FeatureStore clean(manifest, kind, dsp, std::nullopt);
  r.clean_eer = compute_eer(score_trials(net, clean, trials, cfg, use_verif_head), labels);
  FeatureStore perturbed(manifest, kind, dsp, std::nullopt);
  perturbed.set_transform([spec](const UtteranceRef& u, std::vector<float>& x) { apply_perturbation(spec, u.utt_id, x); });
  r.perturbed_eer = compute_eer(score_trials(net, perturbed, trials, cfg, use_verif_head), labels);
  return r;
}

std::string_view to_string(EvalTask task) {
  switch (task) {
    case EvalTask::iden:
      return "iden";
    case EvalTask::verif:
      return "verif";
    case EvalTask::env_probe:
      return "env-probe";
    case EvalTask::perturb:
      return "perturb";
  }
  return "?";
}

EvalTask parse_eval_task(std::string_view text) {
  if (text == "iden") return EvalTask::iden;
  if (text == "verif") return EvalTask::verif;
  if (text == "env-probe") return EvalTask::env_probe;
  if (text == "perturb") return EvalTask::perturb;
  throw Error("unknown eval task '" + std::string(text) + "' (expected iden, verif, env-probe or perturb)");
}

std::string EvalReport::key_values() const {
  std::ostringstream s;
  s.precision(10);
  s << "task=" << to_string(task) << '\n';
  if (task == EvalTask::iden) {
    s << "top1=" << top1 << "\ntop5=" << top5 << '\n';
  } else {
    s << "eer=" << eer << '\n';
  }
  s << "n_trials=" << n_trials << '\n';
  for (const auto& [k, v] : extra) s << k << '=' << v << '\n';
  s << "config_hash=" << hex64(config_hash) << '\n';
  return s.str();
}

std::string EvalReport::table() const {
  std::ostringstream s;
  char line[128];
  s << "+-----------------+--------------+\n";
  auto row = [&](const std::string& k, const std::string& v) {
    std::snprintf(line, sizeof line, "| %-15s | %12s |\n", k.c_str(), v.c_str());
    s << line;
  };
  auto pct = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.2f%%", 100.0 * v);
    return std::string(b);
  };
  row("task", std::string(to_string(task)));
  if (task == EvalTask::iden) {
    row("top-1", pct(top1));
    row("top-5", pct(top5));
  } else {
    row("EER", pct(eer));
  }
  row(task == EvalTask::iden ? "utterances" : "trials", std::to_string(n_trials));
  for (const auto& [k, v] : extra) row(k, pct(v));
  s << "+-----------------+--------------+\n";
  return s.str();
}

void save_scores(const fs::path& file, const std::vector<int>& labels, const std::vector<double>& scores) {
  if (labels.size() != scores.size()) throw Error("save_scores: labels and scores differ in length");
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::FILE* f = std::fopen(file.string().c_str(), "w");
  if (!f) throw Error("cannot write score file '" + file.string() + "'");
  for (std::size_t i = 0; i < scores.size(); ++i) std::fprintf(f, "%zu %d %.17g\n", i, labels[i], scores[i]);
  if (std::fclose(f) != 0) throw Error("failed writing score file '" + file.string() + "'");
}

void load_scores(const fs::path& file, std::vector<int>& labels, std::vector<double>& scores) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open score file '" + file.string() + "'");
  labels.clear();
  scores.clear();
  std::size_t index = 0;
  int label = 0;
  std::string score;
  while (in >> index >> label >> score) {
    if (index != scores.size()) throw Error("score file '" + file.string() + "' is out of order at " + std::to_string(index));
    labels.push_back(label);
    scores.push_back(std::stod(score));
  }
}

}  // namespace envadv
