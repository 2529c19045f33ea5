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

#ifndef ENVADV_FEATURE_STORE_HPP_
#define ENVADV_FEATURE_STORE_HPP_

#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include "envadv/corpus.hpp"
#include "envadv/dsp.hpp"

namespace envadv {

/// Reads ENVADV_CACHE_DIR; empty when unset.
std::optional<std::filesystem::path> cache_dir_from_env();

/// Serves normalised 2 s segments for utterances of one manifest.
///
/// Full-utterance features (before MVN) are memoised in memory and, when a
/// cache directory is configured, on disk under a key of (utt_id, feature
/// kind, dsp-config hash). A crop whose first sample lies on the frame hop
/// grid is sliced from those features, which is bitwise identical to
/// extracting features from the cropped waveform; other offsets fall back
/// to the waveform path. Safe for concurrent use.
class FeatureStore {
 public:
  using Matrix = Eigen::MatrixXf;
  /// Applied to every waveform after loading (e.g. a simulated channel).
  using WaveTransform = std::function<void(const UtteranceRef&, std::vector<float>&)>;

  FeatureStore(Manifest manifest, FeatureKind kind, DspConfig cfg = {},
               std::optional<std::filesystem::path> cache_dir = cache_dir_from_env(),
               std::size_t memory_limit_bytes = std::size_t{3} << 30);

  /// The disk cache is bypassed when a transform is set.
  void set_transform(WaveTransform transform);

  const Manifest& manifest() const { return manifest_; }
  FeatureKind kind() const { return kind_; }
  const DspConfig& dsp() const { return cfg_; }
  std::uint64_t dsp_hash() const { return cfg_.hash(kind_); }

  /// Pre-MVN features of the whole utterance.
  std::shared_ptr<const Matrix> full(const std::string& utt_id);

  FeatureSegment<float> segment(const std::string& utt_id, double offset_s);

  std::filesystem::path cache_file(const std::string& utt_id) const;

  std::size_t memo_hits() const { return hits_; }

 private:
  std::shared_ptr<const Matrix> compute(const UtteranceRef& u) const;
  std::vector<float> load(const UtteranceRef& u) const;

  Manifest manifest_;
  FeatureKind kind_;
  DspConfig cfg_;
  std::optional<std::filesystem::path> cache_dir_;
  WaveTransform transform_;
  std::size_t memory_limit_;
  std::size_t memory_used_ = 0;
  std::size_t hits_ = 0;
  std::mutex mutex_;
  std::unordered_map<std::string, std::shared_ptr<const Matrix>> memo_;
};

}  // namespace envadv

#endif  // ENVADV_FEATURE_STORE_HPP_
