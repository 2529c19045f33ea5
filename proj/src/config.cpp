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

#include "envadv/config.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace envadv {
using nlohmann::json;

std::string_view to_string(PhaseOrder order) {
  return order == PhaseOrder::env_then_speaker ? "env-then-speaker" : "speaker-then-env";
}

PhaseOrder parse_phase_order(std::string_view text) {
  if (text == "env-then-speaker") return PhaseOrder::env_then_speaker;
  if (text == "speaker-then-env") return PhaseOrder::speaker_then_env;
  throw Error("unknown phase order '" + std::string(text) + "'");
}

std::string_view to_string(DistanceMetric metric) {
  return metric == DistanceMetric::euclidean_l2 ? "euclidean-l2" : "euclidean";
}

DistanceMetric parse_metric(std::string_view text) {
  if (text == "euclidean-l2") return DistanceMetric::euclidean_l2;
  if (text == "euclidean") return DistanceMetric::euclidean;
  throw Error("unknown distance metric '" + std::string(text) + "'");
}

double TrainConfig::lr_at(int epoch) const { return lr0 * std::pow(lr_decay, epoch); }

double TrainConfig::env_lr_at(int epoch) const { return (env_lr > 0 ? env_lr : lr0) * std::pow(lr_decay, epoch); }

void TrainConfig::validate() const {
  if (!(lr0 > 0)) throw Error("train.lr0 must be positive");
  if (!(lr_decay > 0 && lr_decay <= 1)) throw Error("train.lr_decay must lie in (0, 1]");
  if (max_epochs < 1) throw Error("train.max_epochs must be positive");
  if (patience < 1) throw Error("train.patience must be at least 1");
  if (n_speakers_per_batch < 2) throw Error("train.n_speakers_per_batch must be at least 2");
  if (!(val_fraction >= 0 && val_fraction < 1)) throw Error("train.val_fraction must lie in [0, 1)");
  if (!(loss.alpha >= 0) || !std::isfinite(loss.alpha)) throw Error("loss.alpha must be finite and non-negative");
  if (!(loss.margin >= 0) || !std::isfinite(loss.margin)) throw Error("loss.margin must be finite and non-negative");
  if (!(loss.contrastive_margin > 0)) throw Error("loss.contrastive_margin must be positive");
}

// nlohmann ADL hooks.

void to_json(json& j, const TrunkConfig& c) {
  j = {{"arch", to_string(c.arch)},     {"pool", to_string(c.pool)},         {"embed_dim", c.embed_dim},
       {"n_speakers", c.n_speakers},    {"width", c.width},                  {"sap_hidden", c.sap_hidden},
       {"env_dim", c.env_dim},          {"env_order", to_string(c.env_order)}};
}

void from_json(const json& j, TrunkConfig& c) {
  c.arch = parse_arch(j.value("arch", std::string(to_string(c.arch))));
  c.pool = parse_pool(j.value("pool", std::string(to_string(c.pool))));
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.n_speakers = j.value("n_speakers", c.n_speakers);
  c.width = j.value("width", c.width);
  c.sap_hidden = j.value("sap_hidden", c.sap_hidden);
  c.env_dim = j.value("env_dim", c.env_dim);
  c.env_order = parse_env_order(j.value("env_order", std::string(to_string(c.env_order))));
}

void to_json(json& j, const DspConfig& c) {
  j = {{"sample_rate", c.sample_rate}, {"win_length", c.win_length}, {"hop_length", c.hop_length},
       {"fft_size", c.fft_size},       {"n_mels", c.n_mels},         {"fmin_hz", c.fmin_hz},
       {"fmax_hz", c.fmax_hz},         {"log_floor", c.log_floor},
       {"mvn_mode", c.mvn_mode == MvnMode::crop ? "crop" : "utterance"},
       {"segment_s", c.segment_s}};
}

void from_json(const json& j, DspConfig& c) {
  c.sample_rate = j.value("sample_rate", c.sample_rate);
  c.win_length = j.value("win_length", c.win_length);
  c.hop_length = j.value("hop_length", c.hop_length);
  c.fft_size = j.value("fft_size", c.fft_size);
  c.n_mels = j.value("n_mels", c.n_mels);
  c.fmin_hz = j.value("fmin_hz", c.fmin_hz);
  c.fmax_hz = j.value("fmax_hz", c.fmax_hz);
  c.log_floor = j.value("log_floor", c.log_floor);
  const std::string mode = j.value("mvn_mode", std::string("crop"));
  if (mode != "crop" && mode != "utterance") throw Error("dsp.mvn_mode must be crop or utterance");
  c.mvn_mode = mode == "crop" ? MvnMode::crop : MvnMode::utterance;
  c.segment_s = j.value("segment_s", c.segment_s);
}

void to_json(json& j, const LossConfig& c) {
  j = {{"margin", c.margin},
       {"alpha", c.alpha},
       {"contrastive_margin", c.contrastive_margin},
       {"normalize_env", c.normalize_env}};
}

void from_json(const json& j, LossConfig& c) {
  c.margin = j.value("margin", c.margin);
  c.alpha = j.value("alpha", c.alpha);
  c.contrastive_margin = j.value("contrastive_margin", c.contrastive_margin);
  c.normalize_env = j.value("normalize_env", c.normalize_env);
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"lr0", c.lr0},
       {"lr_decay", c.lr_decay},
       {"max_epochs", c.max_epochs},
       {"patience", c.patience},
       {"n_speakers_per_batch", c.n_speakers_per_batch},
       {"seed", c.seed},
       {"env_lr", c.env_lr},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"steps_per_epoch", c.steps_per_epoch},
       {"val_fraction", c.val_fraction},
       {"val_crops", c.val_crops},
       {"env_phase", c.env_phase},
       {"order", to_string(c.order)},
       {"grid_offsets", c.grid_offsets},
       {"workers", c.workers},
       {"prefetch", c.prefetch},
       {"loss", c.loss}};
}

void from_json(const json& j, TrainConfig& c) {
  c.lr0 = j.value("lr0", c.lr0);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.n_speakers_per_batch = j.value("n_speakers_per_batch", c.n_speakers_per_batch);
  c.seed = j.value("seed", c.seed);
  c.env_lr = j.value("env_lr", c.env_lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.val_crops = j.value("val_crops", c.val_crops);
  c.env_phase = j.value("env_phase", c.env_phase);
  c.order = parse_phase_order(j.value("order", std::string(to_string(c.order))));
  c.grid_offsets = j.value("grid_offsets", c.grid_offsets);
  c.workers = j.value("workers", c.workers);
  c.prefetch = j.value("prefetch", c.prefetch);
  if (j.contains("loss")) j.at("loss").get_to(c.loss);
}

void to_json(json& j, const VerifTrainConfig& c) {
  j = {{"pairs_per_batch", c.pairs_per_batch},
       {"hard_negatives", c.hard_negatives},
       {"epochs", c.epochs},
       {"steps_per_epoch", c.steps_per_epoch},
       {"lr", c.lr},
       {"momentum", c.momentum},
       {"seed", c.seed},
       {"normalize", c.normalize}};
}

void from_json(const json& j, VerifTrainConfig& c) {
  c.pairs_per_batch = j.value("pairs_per_batch", c.pairs_per_batch);
  c.hard_negatives = j.value("hard_negatives", c.hard_negatives);
  c.epochs = j.value("epochs", c.epochs);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.seed = j.value("seed", c.seed);
  c.normalize = j.value("normalize", c.normalize);
}

void to_json(json& j, const EvalConfig& c) {
  j = {{"n_crops", c.n_crops},
       {"metric", to_string(c.metric)},
       {"env_probe_verif_head", c.env_probe_verif_head},
       {"workers", c.workers}};
}

void from_json(const json& j, EvalConfig& c) {
  c.n_crops = j.value("n_crops", c.n_crops);
  c.metric = parse_metric(j.value("metric", std::string(to_string(c.metric))));
  c.env_probe_verif_head = j.value("env_probe_verif_head", c.env_probe_verif_head);
  c.workers = j.value("workers", c.workers);
}

void to_json(json& j, const PathConfig& c) {
  j = {{"corpus_root", c.corpus_root.string()},
       {"manifest", c.manifest.string()},
       {"out_dir", c.out_dir.string()},
       {"trials", c.trials.string()},
       {"checkpoint", c.checkpoint.string()}};
}

void from_json(const json& j, PathConfig& c) {
  c.corpus_root = j.value("corpus_root", c.corpus_root.string());
  c.manifest = j.value("manifest", c.manifest.string());
  c.out_dir = j.value("out_dir", c.out_dir.string());
  c.trials = j.value("trials", c.trials.string());
  c.checkpoint = j.value("checkpoint", c.checkpoint.string());
}

namespace {

json run_to_json(const RunConfig& c) {
  return {{"trunk", c.trunk}, {"dsp", c.dsp},     {"train", c.train},
          {"verif", c.verif}, {"eval", c.eval},   {"paths", c.paths}};
}

RunConfig run_from_json(const json& j) {
  static const char* kSections[] = {"trunk", "dsp", "train", "verif", "eval", "paths"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kSections), std::end(kSections), key) == std::end(kSections)) {
      throw Error("unknown config section '" + key + "'");
    }
  }
  RunConfig c;
  if (j.contains("trunk")) j.at("trunk").get_to(c.trunk);
  if (j.contains("dsp")) j.at("dsp").get_to(c.dsp);
  if (j.contains("train")) j.at("train").get_to(c.train);
  if (j.contains("verif")) j.at("verif").get_to(c.verif);
  if (j.contains("eval")) j.at("eval").get_to(c.eval);
  if (j.contains("paths")) j.at("paths").get_to(c.paths);
  return c;
}

}  // namespace

std::string RunConfig::to_json(int indent) const { return run_to_json(*this).dump(indent); }

RunConfig RunConfig::from_json(const std::string& text) {
  try {
    return run_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(std::string("invalid config: ") + e.what());
  }
}

RunConfig RunConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open config '" + file.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error("expected key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json j = run_to_json(*this);
  std::string pointer = "/" + key;
  for (auto& ch : pointer) {
    if (ch == '.') ch = '/';
  }
  const json::json_pointer ptr(pointer);
  if (!j.contains(ptr)) throw Error("unknown config key '" + key + "'");
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  j[ptr] = value;
  *this = run_from_json(j);
}

std::uint64_t RunConfig::hash() const {
  json j = run_to_json(*this);
  j.erase("paths");
  j["train"].erase("workers");
  j["train"].erase("prefetch");
  j["eval"].erase("workers");
  return fnv1a(j.dump());
}

std::string trunk_to_json(const TrunkConfig& cfg) { return json(cfg).dump(); }

TrunkConfig trunk_from_json(const std::string& text) { return json::parse(text).get<TrunkConfig>(); }

}  // namespace envadv
