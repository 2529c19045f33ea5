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

// Command-line entry point: prepare | synth | train | train-verif | eval | make-trials.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "envadv/checkpoint.hpp"
#include "envadv/config.hpp"
#include "envadv/corpus.hpp"
#include "envadv/eval.hpp"
#include "envadv/synthgen.hpp"
#include "envadv/trainer.hpp"
#include "plots.hpp"

namespace fs = std::filesystem;
using namespace envadv;
using nlohmann::json;

namespace {

/// Options shared by the commands that consume a RunConfig.
struct ConfigOptions {
  std::string config;
  std::vector<std::string> sets;
  std::optional<double> alpha;
  std::optional<std::string> arch;
  std::optional<std::string> pool;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string manifest;
  std::string out;
  bool emit_plots = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON run configuration");
    cmd->add_option("--set", sets, "Override a config field, e.g. --set train.lr0=0.01 (repeatable)");
    cmd->add_option("--alpha", alpha, "Weight of the confusion term");
    cmd->add_option("--arch", arch, "Trunk architecture")->check(CLI::IsMember({"vggm40", "thin-resnet34"}));
    cmd->add_option("--pool", pool, "Temporal pooling")->check(CLI::IsMember({"tap", "sap"}));
    cmd->add_option("--seed", seed, "Random seed");
    cmd->add_option("--workers", workers, "Data-loading threads");
    cmd->add_option("--manifest", manifest, "Manifest file (overrides paths.manifest)");
    cmd->add_option("--out", out, "Output directory (overrides paths.out_dir)");
    cmd->add_flag("--emit-plots", emit_plots, "Write SVG plots next to the outputs");
  }

  RunConfig build() const {
    RunConfig cfg = config.empty() ? RunConfig{} : RunConfig::load(config);
    for (const auto& s : sets) cfg.set(s);
    if (alpha) cfg.train.loss.alpha = *alpha;
    if (arch) cfg.trunk.arch = parse_arch(*arch);
    if (pool) cfg.trunk.pool = parse_pool(*pool);
    if (seed) {
      cfg.train.seed = *seed;
      cfg.verif.seed = *seed;
    }
    if (workers) {
      cfg.train.workers = *workers;
      cfg.eval.workers = *workers;
    }
    if (!manifest.empty()) cfg.paths.manifest = manifest;
    if (!out.empty()) cfg.paths.out_dir = out;
    return cfg;
  }
};

Manifest require_manifest(const RunConfig& cfg) {
  if (cfg.paths.manifest.empty()) throw Error("no manifest given (--manifest or paths.manifest)");
  return load_manifest(cfg.paths.manifest);
}

std::map<std::string, std::string> key_values(const std::string& line) {
  std::map<std::string, std::string> out;
  std::istringstream in(line);
  for (std::string tok; in >> tok;) {
    const auto eq = tok.find('=');
    if (eq != std::string::npos) out[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return out;
}

void print_epoch_row(const std::string& line) {
  const auto kv = key_values(line);
  auto get = [&](const char* k) { return kv.count(k) ? std::stod(kv.at(k)) : 0.0; };
  std::printf("%5s %10.4f %10.4f %9.4f %10.3g %9.2f%%\n", kv.count("epoch") ? kv.at("epoch").c_str() : "?",
              get("L_e"), get("CE"), get("KL"), get("lr"), 100 * get("val_top1"));
  std::fflush(stdout);
}

void plot_metrics(const fs::path& log, const fs::path& dir) {
  std::map<std::string, plots::Series> losses, val;
  std::ifstream in(log);
  for (std::string line; std::getline(in, line);) {
    const auto kv = key_values(line);
    if (kv.count("kind") == 0 || kv.at("kind") != "epoch") continue;
    const double e = std::stod(kv.at("epoch"));
    for (const char* k : {"L_e", "CE", "KL"}) losses[k].emplace_back(e, std::stod(kv.at(k)));
    val["validation top-1"].emplace_back(e, std::stod(kv.at("val_top1")));
  }
  plots::line_plot(dir / "losses.svg", "Training losses per epoch", "epoch", losses);
  plots::line_plot(dir / "validation.svg", "Validation top-1 per epoch", "epoch", val);
}

// ---------------------------------------------------------------------------

int cmd_prepare(const std::string& root, const std::string& out, const std::string& task, std::uint64_t seed,
                std::optional<double> test_fraction, const std::string& iden_split, const std::string& verif_trials) {
  if (!fs::is_directory(root)) throw Error("corpus root '" + root + "' does not exist or is not a directory");
  ScanStats stats;
  const Manifest scanned = scan_corpus(fs::absolute(root).lexically_normal(), CorpusLayout::speaker_video_utterance, &stats);
  if (scanned.empty()) throw Error("no readable .wav files under '" + root + "'");
  SplitOptions opt;
  const SplitTask t = task == "verif" ? SplitTask::verif : SplitTask::iden;
  if (test_fraction) (t == SplitTask::iden ? opt.iden_test_fraction : opt.verif_test_fraction) = *test_fraction;
  if (!iden_split.empty()) opt.iden_split_file = iden_split;
  if (!verif_trials.empty()) opt.verif_trials_file = verif_trials;
  const Manifest m = make_splits(scanned, t, seed, opt);
  save_manifest(out, m);
  std::size_t dev = 0;
  for (const auto& u : m.utterances()) dev += u.split == Split::dev_iden || u.split == Split::dev_verif;
  std::printf("manifest: %zu utterances (%zu dev, %zu test), %zu speakers, %zu files skipped -> %s\n", m.size(), dev,
              m.size() - dev, m.speakers().size(), stats.skipped, out.c_str());
  return 0;
}

int cmd_synth(synth::SynthSpec spec, const std::string& out, int workers, bool probe) {
  spec.validate();
  const auto r = synth::generate(spec, out, workers, probe);
  std::printf("synthetic corpus: %zu utterances, %zu speakers -> %s\n", r.manifest.size(),
              r.manifest.speakers().size(), out.c_str());
  if (probe) std::printf("environment probe accuracy (mean log-mel, nearest centroid): %.2f%%\n", 100 * r.probe.accuracy);
  return 0;
}

int cmd_train(const ConfigOptions& o, bool resume) {
  RunConfig cfg = o.build();
  const Manifest m = require_manifest(cfg);
  const auto dev_speakers = m.filter({Split::dev_iden, Split::dev_verif}).speakers().size();
  if (dev_speakers > 0 && static_cast<std::size_t>(cfg.trunk.n_speakers) != dev_speakers) {
    std::fprintf(stderr, "note: trunk.n_speakers set to %zu, the number of dev speakers\n", dev_speakers);
    cfg.trunk.n_speakers = static_cast<int>(dev_speakers);
  }
  fs::create_directories(cfg.paths.out_dir);
  std::ofstream(cfg.paths.out_dir / "config.json") << cfg.to_json() << '\n';
  std::printf("config %s  arch=%s pool=%s alpha=%g\n", hex64(cfg.hash()).c_str(),
              std::string(to_string(cfg.trunk.arch)).c_str(), std::string(to_string(cfg.trunk.pool)).c_str(),
              cfg.train.loss.alpha);
  std::printf("%5s %10s %10s %9s %10s %10s\n", "epoch", "L_e", "CE", "KL", "lr", "val top-1");
  TrainOptions opt;
  opt.resume = resume;
  opt.on_epoch = print_epoch_row;
  const TrainResult r = train(m, cfg, opt);
  std::printf("best epoch %d, validation top-1 %.2f%%%s\n", r.best_epoch, 100 * r.best_metric,
              r.stopped_early ? " (stopped early)" : "");
  std::printf("checkpoints: %s, %s\nmetrics: %s\n", r.best_checkpoint.c_str(), r.last_checkpoint.c_str(),
              r.metrics_log.c_str());
  if (o.emit_plots) plot_metrics(r.metrics_log, cfg.paths.out_dir / "plots");
  return 0;
}

/// DSP settings of the run that produced the checkpoint, else of `cfg`.
DspConfig checkpoint_dsp(const Checkpoint& ck, const RunConfig& cfg, bool explicit_config) {
  DspConfig dsp = cfg.dsp;
  const json extra = json::parse(ck.extra_json);
  if (!explicit_config && extra.contains("config")) dsp = RunConfig::from_json(extra["config"].dump()).dsp;
  if (dsp.hash(ck.trunk.feature_kind()) != ck.dsp_hash) {
    warn("feature settings differ from those the checkpoint was trained with (dsp hash " +
         hex64(dsp.hash(ck.trunk.feature_kind())) + " vs " + hex64(ck.dsp_hash) + ")");
  }
  return dsp;
}

int cmd_train_verif(const ConfigOptions& o, const std::string& checkpoint, std::string out) {
  const RunConfig cfg = o.build();
  const Manifest m = require_manifest(cfg);
  Checkpoint ck = load_checkpoint(checkpoint);
  const DspConfig dsp = checkpoint_dsp(ck, cfg, !o.config.empty());
  Model net = import_model<float>(ck);
  const Manifest dev = m.filter({Split::dev_iden, Split::dev_verif});
  if (dev.empty()) throw Error("manifest has no dev split");
  FeatureStore store(m, ck.trunk.feature_kind(), dsp);
  const std::uint64_t before = parameter_checksum(net.trunk_parameters());
  const VerifTrainResult r = train_verif_head(net, store, dev, cfg.verif, cfg.train.loss.contrastive_margin);
  if (parameter_checksum(net.trunk_parameters()) != before) throw Error("trunk parameters changed while frozen");
  export_model(ck, net);
  if (out.empty()) out = (fs::path(checkpoint).parent_path() / "verif.ckpt").string();
  save_checkpoint(out, ck);
  const std::size_t n = r.loss.size();
  std::printf("verification head: %zu steps, loss %.4f -> %.4f, positive distance %.4f -> %.4f\n", n,
              r.loss.front(), r.loss.back(), r.positive_distance.front(), r.positive_distance.back());
  std::printf("checkpoint: %s\n", out.c_str());
  if (o.emit_plots) {
    plots::Series loss, pos;
    for (std::size_t i = 0; i < n; ++i) {
      loss.emplace_back(static_cast<double>(i), r.loss[i]);
      pos.emplace_back(static_cast<double>(i), r.positive_distance[i]);
    }
    plots::line_plot(fs::path(out).parent_path() / "plots" / "verif-head.svg", "Verification-head training", "step",
                     {{"contrastive loss", loss}, {"positive distance", pos}});
  }
  return 0;
}

struct EvalOptions {
  std::string checkpoint;
  std::string task = "verif";
  std::string trials;
  std::string scores;
  std::string report;
  std::size_t n_trials = 2000;
  std::uint64_t trial_seed = 0;
  double cutoff_hz = 1000;
  double snr_db = 10;
  std::uint64_t perturb_seed = 0;
  bool no_verif_head = false;
};

Manifest test_split(const Manifest& m) {
  Manifest t = m.filter({Split::test_verif, Split::test_iden});
  return t.empty() ? m : t;
}

int cmd_eval(const ConfigOptions& o, const EvalOptions& e) {
  const RunConfig cfg = o.build();
  const Manifest m = require_manifest(cfg);
  const Checkpoint ck = load_checkpoint(e.checkpoint);
  const DspConfig dsp = checkpoint_dsp(ck, cfg, !o.config.empty());
  const Model net = import_model<float>(ck);
  const EvalTask task = parse_eval_task(e.task);
  const bool head = !e.no_verif_head;
  EvalReport report;
  report.task = task;
  report.config_hash = ck.config_hash;
  std::vector<double> scores;
  std::vector<int> labels;

  if (task == EvalTask::iden) {
    FeatureStore store(m, ck.trunk.feature_kind(), dsp);
    const Manifest test = m.filter({Split::test_iden});
    if (test.empty()) throw Error("manifest has no test_iden utterances");
    const IdentResult r = eval_identification(net, store, test, ck.speakers, cfg.eval.n_crops, cfg.eval.workers);
    report.top1 = r.top1;
    report.top5 = r.top5;
    report.n_trials = r.n;
  } else {
    TrialList trials;
    if (!e.trials.empty()) {
      trials = load_trials(e.trials, task == EvalTask::env_probe ? TrialKind::env_probe : TrialKind::speaker_verif);
    } else if (task == EvalTask::env_probe) {
      trials = build_env_probe_trials(test_split(m), e.n_trials, e.trial_seed);
    } else {
      trials = build_verification_trials(test_split(m), e.n_trials, e.trial_seed);
    }
    for (const auto& t : trials.pairs) labels.push_back(t.label);
    report.n_trials = trials.pairs.size();
    if (task == EvalTask::perturb) {
      PerturbSpec spec;
      spec.fir = lowpass_fir(e.cutoff_hz, 101, dsp.sample_rate);
      spec.snr_db = e.snr_db;
      spec.seed = e.perturb_seed;
      const PerturbResult r = channel_perturb_eval(net, m, ck.trunk.feature_kind(), dsp, trials, spec, cfg.eval, head);
      report.eer = r.perturbed_eer;
      report.extra["clean_eer"] = r.clean_eer;
      report.extra["degradation"] = r.degradation();
    } else {
      FeatureStore store(m, ck.trunk.feature_kind(), dsp);
      EvalConfig ec = cfg.eval;
      if (task == EvalTask::env_probe) ec.env_probe_verif_head = ec.env_probe_verif_head && head;
      scores = task == EvalTask::env_probe
                   ? score_trials(net, store, trials, ec, ec.env_probe_verif_head)
                   : score_trials(net, store, trials, ec, head);
      report.eer = compute_eer(scores, labels);
    }
  }

  std::fputs(report.table().c_str(), stdout);
  const fs::path dir = cfg.paths.out_dir;
  const std::string name(to_string(task));
  const fs::path report_file = e.report.empty() ? dir / ("eval-" + name + ".txt") : fs::path(e.report);
  if (report_file.has_parent_path()) fs::create_directories(report_file.parent_path());
  std::ofstream(report_file) << report.key_values();
  std::printf("report: %s\n", report_file.c_str());
  if (!scores.empty()) {
    const fs::path score_file = e.scores.empty() ? dir / ("scores-" + name + ".txt") : fs::path(e.scores);
    save_scores(score_file, labels, scores);
    std::printf("scores: %s\n", score_file.c_str());
    if (o.emit_plots) {
      plots::score_histogram(dir / "plots" / ("scores-" + name + ".svg"), "Score distributions (" + name + ")",
                             scores, labels);
    }
  }
  return 0;
}

int cmd_make_trials(const std::string& manifest, const std::string& kind, std::size_t n, std::uint64_t seed,
                    const std::string& split, const std::string& out) {
  const Manifest all = load_manifest(manifest);
  Manifest m = all;
  if (split == "test") {
    m = all.filter({Split::test_iden, Split::test_verif});
  } else if (split == "dev") {
    m = all.filter({Split::dev_iden, Split::dev_verif});
  }
  if (m.empty()) throw Error("the " + split + " split of '" + manifest + "' is empty");
  const TrialList t = kind == "env-probe" ? build_env_probe_trials(m, n, seed) : build_verification_trials(m, n, seed);
  save_trials(out, t);
  std::size_t pos = 0;
  for (const auto& p : t.pairs) pos += p.label;
  std::printf("%zu %s trials (%zu positive) -> %s\n", t.pairs.size(), kind.c_str(), pos, out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"envadv: environment-adversarial speaker embedding training and evaluation"};
  app.require_subcommand(1, 1);

  // prepare
  auto* prepare = app.add_subcommand("prepare", "Scan a speaker/video/utterance.wav corpus and assign splits");
  std::string root, prep_out, task = "iden", iden_split, verif_trials;
  std::uint64_t prep_seed = 0;
  std::optional<double> test_fraction;
  prepare->add_option("--root", root, "Corpus root")->required();
  prepare->add_option("--out", prep_out, "Manifest to write")->required();
  prepare->add_option("--task", task, "Split protocol")->check(CLI::IsMember({"iden", "verif"}));
  prepare->add_option("--seed", prep_seed, "Split seed");
  prepare->add_option("--test-fraction", test_fraction, "Held-out fraction (utterances for iden, speakers for verif)");
  prepare->add_option("--iden-split", iden_split, "Official identification split file");
  prepare->add_option("--verif-trials", verif_trials, "Official verification trial list");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic speaker/environment corpus");
  synth::SynthSpec spec;
  std::string synth_out;
  int synth_workers = 1;
  bool no_probe = false;
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--speakers", spec.n_speakers, "Number of speakers");
  synth_cmd->add_option("--envs", spec.n_envs_per_speaker, "Environments (videos) per speaker");
  synth_cmd->add_option("--utts", spec.utts_per_env, "Utterances per environment");
  synth_cmd->add_option("--duration", spec.utt_len_s, "Utterance length in seconds");
  synth_cmd->add_option("--seed", spec.seed, "Generator seed");
  synth_cmd->add_option("--workers", synth_workers, "Rendering threads");
  synth_cmd->add_flag("--no-probe", no_probe, "Skip the environment-salience probe");

  // train
  auto* train_cmd = app.add_subcommand("train", "Adversarial training of trunk, speaker head and environment network");
  ConfigOptions train_opts;
  bool resume = false;
  train_opts.add(train_cmd);
  train_cmd->add_flag("--resume", resume, "Continue from last.ckpt in the output directory");

  // train-verif
  auto* verif_cmd = app.add_subcommand("train-verif", "Train the verification head on a frozen trunk");
  ConfigOptions verif_opts;
  std::string verif_ckpt, verif_out;
  verif_opts.add(verif_cmd);
  verif_cmd->add_option("--checkpoint", verif_ckpt, "Classification-trained checkpoint")->required();
  verif_cmd->add_option("--out-checkpoint", verif_out, "Where to write the result (default verif.ckpt beside input)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Identification, verification, environment-probe or perturbation eval");
  ConfigOptions eval_opts;
  EvalOptions ev;
  eval_opts.add(eval_cmd);
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--task", ev.task, "Evaluation task")
      ->check(CLI::IsMember({"iden", "verif", "env-probe", "perturb"}));
  eval_cmd->add_option("--trials", ev.trials, "Trial list (default: built from the test split)");
  eval_cmd->add_option("--n-trials", ev.n_trials, "Trials to build when no list is given");
  eval_cmd->add_option("--trial-seed", ev.trial_seed, "Seed for built trial lists");
  eval_cmd->add_option("--scores", ev.scores, "Score file to write");
  eval_cmd->add_option("--report", ev.report, "Report file to write");
  eval_cmd->add_option("--cutoff", ev.cutoff_hz, "Perturbation lowpass cutoff in Hz");
  eval_cmd->add_option("--snr", ev.snr_db, "Perturbation noise SNR in dB");
  eval_cmd->add_option("--perturb-seed", ev.perturb_seed, "Perturbation noise seed");
  eval_cmd->add_flag("--no-verif-head", ev.no_verif_head, "Score pooled trunk embeddings even if a head exists");

  // make-trials
  auto* trials_cmd = app.add_subcommand("make-trials", "Write a verification or environment-probe trial list");
  std::string trials_manifest, trials_kind = "verif", trials_split = "test", trials_out;
  std::size_t trials_n = 2000;
  std::uint64_t trials_seed = 0;
  trials_cmd->add_option("--manifest", trials_manifest, "Manifest file")->required();
  trials_cmd->add_option("--kind", trials_kind, "Trial kind")->check(CLI::IsMember({"verif", "env-probe"}));
  trials_cmd->add_option("--n", trials_n, "Number of trials");
  trials_cmd->add_option("--seed", trials_seed, "Seed");
  trials_cmd->add_option("--split", trials_split, "Utterances to draw from")
      ->check(CLI::IsMember({"test", "dev", "all"}));
  trials_cmd->add_option("--out", trials_out, "Trial list to write")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*prepare) return cmd_prepare(root, prep_out, task, prep_seed, test_fraction, iden_split, verif_trials);
    if (*synth_cmd) return cmd_synth(spec, synth_out, synth_workers, !no_probe);
    if (*train_cmd) return cmd_train(train_opts, resume);
    if (*verif_cmd) return cmd_train_verif(verif_opts, verif_ckpt, verif_out);
    if (*eval_cmd) return cmd_eval(eval_opts, ev);
    if (*trials_cmd) return cmd_make_trials(trials_manifest, trials_kind, trials_n, trials_seed, trials_split, trials_out);
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 1;
}
