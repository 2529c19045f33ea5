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

#ifndef ENVADV_CONFIG_HPP_
#define ENVADV_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <string>

#include "envadv/dsp.hpp"
#include "envadv/losses.hpp"
#include "envadv/nets.hpp"

namespace envadv {

enum class PhaseOrder { env_then_speaker, speaker_then_env };

std::string_view to_string(PhaseOrder order);
PhaseOrder parse_phase_order(std::string_view text);

struct TrainConfig {
  double lr0 = 1e-3;
  double lr_decay = 0.95;
  int max_epochs = 100;
  int patience = 10;
  int n_speakers_per_batch = 64;
  std::uint64_t seed = 0;
  /// Initial environment-network learning rate; 0 follows lr0. Both decay alike.
  double env_lr = 0.0;
  double momentum = 0.9;
  double weight_decay = 0.0;
  /// 0 means one pass over the training utterances, ceil(U / 3N) steps.
  int steps_per_epoch = 0;
  double val_fraction = 0.05;
  int val_crops = 10;
  /// Disables the environment phase entirely (used to compare trajectories).
  bool env_phase = true;
  PhaseOrder order = PhaseOrder::env_then_speaker;
  /// Training crops start on the feature hop grid so cached features apply.
  bool grid_offsets = true;
  int workers = 1;
  int prefetch = 4;
  LossConfig loss;

  double lr_at(int epoch) const;
  double env_lr_at(int epoch) const;
  void validate() const;
};

struct VerifTrainConfig {
  int pairs_per_batch = 32;
  /// Hardest different-speaker pairs kept from each batch's candidate pool.
  int hard_negatives = 32;
  int epochs = 30;
  int steps_per_epoch = 50;
  double lr = 1e-4;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  /// Train on L2-normalised head outputs, matching the scoring metric.
  bool normalize = true;
};

enum class DistanceMetric { euclidean_l2, euclidean };

std::string_view to_string(DistanceMetric metric);
DistanceMetric parse_metric(std::string_view text);

struct EvalConfig {
  int n_crops = 10;
  DistanceMetric metric = DistanceMetric::euclidean_l2;
  /// Score the environment probe through the verification head when present.
  bool env_probe_verif_head = false;
  int workers = 1;
};

struct PathConfig {
  std::filesystem::path corpus_root;
  std::filesystem::path manifest;
  std::filesystem::path out_dir = "runs/default";
  std::filesystem::path trials;
  std::filesystem::path checkpoint;
};

/// Everything a run needs; serialised as one JSON document.
struct RunConfig {
  TrunkConfig trunk;
  DspConfig dsp;
  TrainConfig train;
  VerifTrainConfig verif;
  EvalConfig eval;
  PathConfig paths;

  std::string to_json(int indent = 2) const;
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::filesystem::path& file);

  /// Applies `section.key=value` (value parsed as JSON, else taken as a string).
  void set(const std::string& assignment);

  /// Digest over every field that influences results (paths and worker
  /// counts excluded).
  std::uint64_t hash() const;
};

std::string trunk_to_json(const TrunkConfig& cfg);
TrunkConfig trunk_from_json(const std::string& text);

}  // namespace envadv

#endif  // ENVADV_CONFIG_HPP_
