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

#ifndef ENVADV_CORPUS_HPP_
#define ENVADV_CORPUS_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "envadv/common.hpp"

namespace envadv {

enum class Split { unassigned, dev_iden, test_iden, dev_verif, test_verif };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

/// One audio file. utt_id is the corpus-relative path without extension,
/// e.g. "id10001/1zcIwhmdeo4/00001".
struct UtteranceRef {
  std::string utt_id;
  std::string speaker_id;
  std::string video_id;
  std::filesystem::path path;
  double duration_s = 0.0;
  Split split = Split::unassigned;

  friend bool operator==(const UtteranceRef&, const UtteranceRef&) = default;
};

/// Immutable, utt_id-sorted collection of utterances. Speaker label indices
/// are the positions in the lexicographically sorted speaker list.
class Manifest {
 public:
  Manifest() = default;
  /// Throws if two utterances share an utt_id.
  explicit Manifest(std::vector<UtteranceRef> utterances);

  const std::vector<UtteranceRef>& utterances() const { return utterances_; }
  const std::vector<std::string>& speakers() const { return speakers_; }
  std::size_t size() const { return utterances_.size(); }
  bool empty() const { return utterances_.empty(); }

  const UtteranceRef* find(std::string_view utt_id) const;
  const UtteranceRef& at(std::string_view utt_id) const;

  /// Index of `speaker_id` in speakers(), or -1.
  int speaker_index(std::string_view speaker_id) const;

  /// Utterances whose split is one of `splits`.
  Manifest filter(std::initializer_list<Split> splits) const;

  friend bool operator==(const Manifest& a, const Manifest& b) {
    return a.utterances_ == b.utterances_;
  }

 private:
  std::vector<UtteranceRef> utterances_;
  std::vector<std::string> speakers_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

enum class CorpusLayout { speaker_video_utterance };

struct ScanStats {
  std::size_t accepted = 0;
  std::size_t skipped = 0;
};

/// Walks `root` and turns every `<speaker>/<video>/<utt>.wav` into an
/// UtteranceRef. Unreadable files are skipped and counted.
Manifest scan_corpus(const std::filesystem::path& root,
                     CorpusLayout layout = CorpusLayout::speaker_video_utterance,
                     ScanStats* stats = nullptr);

void write_manifest(std::ostream& out, const Manifest& manifest);
Manifest read_manifest(std::istream& in);
void save_manifest(const std::filesystem::path& file, const Manifest& manifest);
Manifest load_manifest(const std::filesystem::path& file);

enum class SplitTask { iden, verif };

struct SplitOptions {
  /// Fraction of each speaker's utterances held out in iden mode.
  double iden_test_fraction = 7972.0 / 148610.0;
  /// Fraction of speakers held out in verif mode.
  double verif_test_fraction = 40.0 / 1251.0;
  /// VoxCeleb1 `iden_split.txt` ("<1|2|3> <speaker/video/utt.wav>").
  std::optional<std::filesystem::path> iden_split_file;
  /// VoxCeleb1 verification trial list; its speakers form the verif test set.
  std::optional<std::filesystem::path> verif_trials_file;
};

/// Assigns dev/test splits. iden: every kept speaker appears in both splits;
/// verif: test speakers are disjoint from dev speakers.
Manifest make_splits(const Manifest& manifest, SplitTask task,
                     std::uint64_t seed, const SplitOptions& options = {});

struct SegmentRef {
  std::string utt_id;
  double offset_s = 0.0;

  friend bool operator==(const SegmentRef&, const SegmentRef&) = default;
};

struct TripletSpec {
  std::string speaker_id;
  SegmentRef anchor;
  SegmentRef positive;
  SegmentRef negative;

  friend bool operator==(const TripletSpec&, const TripletSpec&) = default;
};

/// Draws (anchor, positive, negative) segments where anchor and positive share
/// a video and the negative comes from another video of the same speaker.
/// Speakers with fewer than two usable videos are not sampled.
class TripletSampler {
 public:
  /// With `offset_step_s` > 0, crop offsets are uniform over the grid
  /// {0, step, 2 step, ...} inside [0, duration - segment_s].
  TripletSampler(const Manifest& manifest, double segment_s, double offset_step_s = 0.0);

  std::size_t eligible_speakers() const { return speakers_.size(); }
  double segment_s() const { return segment_s_; }

  std::vector<TripletSpec> sample(int n_speakers, Rng& rng) const;

 private:
  struct Video {
    std::vector<std::size_t> utterances;
  };
  struct Speaker {
    std::string id;
    std::vector<Video> videos;
    std::size_t n_utterances = 0;
  };

  struct Entry {
    std::string utt_id;
    double duration_s;
  };

  SegmentRef draw_segment(std::size_t entry, Rng& rng) const;

  std::vector<Entry> entries_;
  double segment_s_;
  double offset_step_s_;
  std::vector<Speaker> speakers_;
};

std::vector<TripletSpec> sample_triplet_batch(const Manifest& manifest,
                                              int n_speakers, double segment_s,
                                              Rng& rng);

enum class TrialKind { speaker_verif, env_probe };

struct Trial {
  int label = 0;
  std::string utt_a;
  std::string utt_b;

  friend bool operator==(const Trial&, const Trial&) = default;
};

struct TrialList {
  TrialKind kind = TrialKind::speaker_verif;
  std::vector<Trial> pairs;
};

/// Same-speaker pairs; label 1 iff both utterances share a video. Exactly
/// floor(n_pairs / 2) positives.
TrialList build_env_probe_trials(const Manifest& manifest, std::size_t n_pairs,
                                 std::uint64_t seed);

/// Balanced same-speaker / different-speaker pairs.
TrialList build_verification_trials(const Manifest& manifest,
                                    std::size_t n_pairs, std::uint64_t seed);

/// `label path_a path_b` lines, paths relative to the corpus root.
void save_trials(const std::filesystem::path& file, const TrialList& trials);
TrialList load_trials(const std::filesystem::path& file,
                      TrialKind kind = TrialKind::speaker_verif);

}  // namespace envadv

#endif  // ENVADV_CORPUS_HPP_
