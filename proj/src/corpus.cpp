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

#include "envadv/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "envadv/wav.hpp"

namespace envadv {
namespace fs = std::filesystem;

namespace {

std::vector<std::string_view> split_on(std::string_view line, char sep) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) fields.push_back(line.substr(start, i - start));
  }
  return fields;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(std::string_view text, const std::string& context) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(context + ": bad number '" + std::string(text) + "'");
  }
  return v;
}

std::string strip_extension(std::string_view rel) {
  const auto slash = rel.rfind('/');
  const auto dot = rel.rfind('.');
  if (dot != std::string_view::npos && (slash == std::string_view::npos || dot > slash)) {
    return std::string(rel.substr(0, dot));
  }
  return std::string(rel);
}

std::string speaker_of(std::string_view utt_id) {
  return std::string(utt_id.substr(0, utt_id.find('/')));
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::unassigned: return "unassigned";
    case Split::dev_iden: return "dev_iden";
    case Split::test_iden: return "test_iden";
    case Split::dev_verif: return "dev_verif";
    case Split::test_verif: return "test_verif";
  }
  return "unassigned";
}

Split parse_split(std::string_view text) {
  for (Split s : {Split::unassigned, Split::dev_iden, Split::test_iden, Split::dev_verif,
                  Split::test_verif}) {
    if (to_string(s) == text) return s;
  }
  throw Error("unknown split '" + std::string(text) + "'");
}

Manifest::Manifest(std::vector<UtteranceRef> utterances) : utterances_(std::move(utterances)) {
  std::sort(utterances_.begin(), utterances_.end(),
            [](const UtteranceRef& a, const UtteranceRef& b) { return a.utt_id < b.utt_id; });
  std::set<std::string> speakers;
  by_id_.reserve(utterances_.size());
  for (std::size_t i = 0; i < utterances_.size(); ++i) {
    if (!by_id_.emplace(utterances_[i].utt_id, i).second) {
      throw Error("duplicate utt_id '" + utterances_[i].utt_id + "' in manifest");
    }
    speakers.insert(utterances_[i].speaker_id);
  }
  speakers_.assign(speakers.begin(), speakers.end());
}

const UtteranceRef* Manifest::find(std::string_view utt_id) const {
  auto it = by_id_.find(std::string(utt_id));
  return it == by_id_.end() ? nullptr : &utterances_[it->second];
}

const UtteranceRef& Manifest::at(std::string_view utt_id) const {
  if (const auto* u = find(utt_id)) return *u;
  throw Error("utterance '" + std::string(utt_id) + "' not in manifest");
}

int Manifest::speaker_index(std::string_view speaker_id) const {
  auto it = std::lower_bound(speakers_.begin(), speakers_.end(), speaker_id);
  if (it == speakers_.end() || *it != speaker_id) return -1;
  return static_cast<int>(it - speakers_.begin());
}

Manifest Manifest::filter(std::initializer_list<Split> splits) const {
  std::vector<UtteranceRef> kept;
  for (const auto& u : utterances_) {
    if (std::find(splits.begin(), splits.end(), u.split) != splits.end()) kept.push_back(u);
  }
  return Manifest(std::move(kept));
}

Manifest scan_corpus(const fs::path& root, CorpusLayout layout, ScanStats* stats) {
  if (!fs::is_directory(root)) throw Error("corpus root '" + root.string() + "' is not a directory");
  ScanStats local;
  std::vector<UtteranceRef> utts;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext != ".wav") continue;
    const fs::path rel = entry.path().lexically_relative(root);
    std::vector<std::string> parts;
    for (const auto& p : rel) parts.push_back(p.string());
    if (layout == CorpusLayout::speaker_video_utterance && parts.size() != 3) {
      warn("skipping '" + rel.generic_string() + "': not at speaker/video/utterance depth");
      ++local.skipped;
      continue;
    }
    UtteranceRef u;
    u.speaker_id = parts[0];
    u.video_id = parts[1];
    u.utt_id = strip_extension(rel.generic_string());
    u.path = root / rel;
    try {
      const WavInfo info = read_wav_info(u.path);
      u.duration_s = info.duration_s();
    } catch (const Error& e) {
      warn(std::string("skipping unreadable file: ") + e.what());
      ++local.skipped;
      continue;
    }
    utts.push_back(std::move(u));
    ++local.accepted;
  }
  if (stats) *stats = local;
  if (utts.empty()) throw Error("empty corpus: no audio found under '" + root.string() + "'");
  return Manifest(std::move(utts));
}

void write_manifest(std::ostream& out, const Manifest& manifest) {
  out << "# utt_id\tspeaker_id\tvideo_id\tpath\tduration_s\tsplit\n";
  for (const auto& u : manifest.utterances()) {
    out << u.utt_id << '\t' << u.speaker_id << '\t' << u.video_id << '\t'
        << u.path.generic_string() << '\t' << format_double(u.duration_s) << '\t'
        << to_string(u.split) << '\n';
  }
}

Manifest read_manifest(std::istream& in) {
  std::vector<UtteranceRef> utts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_on(line, '\t');
    const std::string ctx = "manifest line " + std::to_string(line_no);
    if (f.size() != 6) throw Error(ctx + ": expected 6 tab-separated fields");
    UtteranceRef u;
    u.utt_id = f[0];
    u.speaker_id = f[1];
    u.video_id = f[2];
    u.path = fs::path(std::string(f[3]));
    u.duration_s = parse_double(f[4], ctx);
    u.split = parse_split(f[5]);
    utts.push_back(std::move(u));
  }
  return Manifest(std::move(utts));
}

void save_manifest(const fs::path& file, const Manifest& manifest) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write manifest '" + file.string() + "'");
  write_manifest(out, manifest);
  if (!out) throw Error("write failed for manifest '" + file.string() + "'");
}

Manifest load_manifest(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot read manifest '" + file.string() + "'");
  return read_manifest(in);
}

Manifest make_splits(const Manifest& manifest, SplitTask task, std::uint64_t seed,
                     const SplitOptions& options) {
  if (manifest.empty()) throw Error("make_splits: empty manifest");
  std::vector<UtteranceRef> utts = manifest.utterances();

  std::set<std::string> verif_test_speakers;
  if (options.verif_trials_file) {
    const TrialList trials = load_trials(*options.verif_trials_file);
    for (const auto& t : trials.pairs) {
      verif_test_speakers.insert(speaker_of(t.utt_a));
      verif_test_speakers.insert(speaker_of(t.utt_b));
    }
  }

  if (task == SplitTask::verif) {
    std::set<std::string> test = verif_test_speakers;
    if (!options.verif_trials_file) {
      std::vector<std::string> speakers = manifest.speakers();
      if (speakers.size() < 2) throw Error("make_splits(verif): need at least two speakers");
      Rng rng(derive_seed(seed, "split/verif"));
      std::shuffle(speakers.begin(), speakers.end(), rng);
      auto k = static_cast<std::size_t>(
          std::lround(options.verif_test_fraction * static_cast<double>(speakers.size())));
      k = std::clamp<std::size_t>(k, 1, speakers.size() - 1);
      test.insert(speakers.begin(), speakers.begin() + static_cast<long>(k));
    }
    for (auto& u : utts) u.split = test.count(u.speaker_id) ? Split::test_verif : Split::dev_verif;
    return Manifest(std::move(utts));
  }

  // Identification.
  std::vector<UtteranceRef> kept;
  if (options.iden_split_file) {
    std::ifstream in(*options.iden_split_file);
    if (!in) throw Error("cannot read split file '" + options.iden_split_file->string() + "'");
    std::unordered_map<std::string, int> set_of;
    std::string line;
    while (std::getline(in, line)) {
      const auto f = split_ws(line);
      if (f.size() != 2) continue;
      set_of[strip_extension(f[1])] = f[0] == "3" ? 3 : 1;
    }
    std::size_t unlisted = 0;
    for (auto& u : utts) {
      if (verif_test_speakers.count(u.speaker_id)) continue;
      auto it = set_of.find(u.utt_id);
      if (it == set_of.end()) {
        ++unlisted;
        continue;
      }
      u.split = it->second == 3 ? Split::test_iden : Split::dev_iden;
      kept.push_back(u);
    }
    if (unlisted) warn(std::to_string(unlisted) + " utterances absent from the split file were dropped");
    return Manifest(std::move(kept));
  }

  std::map<std::string, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < utts.size(); ++i) by_speaker[utts[i].speaker_id].push_back(i);
  Rng rng(derive_seed(seed, "split/iden"));
  for (auto& [speaker, idx] : by_speaker) {
    if (idx.size() < 2) {
      warn("speaker '" + speaker + "' has fewer than 2 utterances; excluded from iden split");
      continue;
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    auto k = static_cast<std::size_t>(
        std::lround(options.iden_test_fraction * static_cast<double>(idx.size())));
    k = std::clamp<std::size_t>(k, 1, idx.size() - 1);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      UtteranceRef u = utts[idx[j]];
      u.split = j < k ? Split::test_iden : Split::dev_iden;
      kept.push_back(std::move(u));
    }
  }
  return Manifest(std::move(kept));
}

TripletSampler::TripletSampler(const Manifest& manifest, double segment_s, double offset_step_s)
    : segment_s_(segment_s), offset_step_s_(offset_step_s) {
  if (!(segment_s > 0.0)) throw Error("TripletSampler: segment length must be positive");
  if (!(offset_step_s >= 0.0)) throw Error("TripletSampler: offset step must be non-negative");
  std::map<std::string, std::map<std::string, std::vector<std::size_t>>> groups;
  for (const auto& u : manifest.utterances()) {
    if (u.duration_s < segment_s) continue;
    groups[u.speaker_id][u.video_id].push_back(entries_.size());
    entries_.push_back({u.utt_id, u.duration_s});
  }
  for (auto& [speaker, videos] : groups) {
    if (videos.size() < 2) continue;
    Speaker s;
    s.id = speaker;
    for (auto& [video, idx] : videos) {
      s.n_utterances += idx.size();
      s.videos.push_back({std::move(idx)});
    }
    speakers_.push_back(std::move(s));
  }
}

SegmentRef TripletSampler::draw_segment(std::size_t entry, Rng& rng) const {
  const auto& e = entries_[entry];
  if (!(e.duration_s > segment_s_)) return {e.utt_id, 0.0};
  if (offset_step_s_ > 0.0) {
    const auto steps = static_cast<long long>(std::floor((e.duration_s - segment_s_) / offset_step_s_ + 1e-9));
    std::uniform_int_distribution<long long> k(0, steps);
    return {e.utt_id, static_cast<double>(k(rng)) * offset_step_s_};
  }
  std::uniform_real_distribution<double> offset(0.0, e.duration_s - segment_s_);
  return {e.utt_id, offset(rng)};
}

std::vector<TripletSpec> TripletSampler::sample(int n_speakers, Rng& rng) const {
  if (speakers_.empty()) throw Error("no multi-video speakers available for triplet sampling");
  if (n_speakers < 2) throw Error("triplet batch needs at least 2 speakers");
  if (static_cast<std::size_t>(n_speakers) > speakers_.size()) {
    throw Error("triplet batch asks for " + std::to_string(n_speakers) + " speakers but only " +
                std::to_string(speakers_.size()) + " are eligible");
  }
  std::vector<std::size_t> order(speakers_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  // Partial Fisher-Yates: the first n_speakers entries are a uniform draw.
  for (int i = 0; i < n_speakers; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), order.size() - 1);
    std::swap(order[static_cast<std::size_t>(i)], order[pick(rng)]);
  }

  std::vector<TripletSpec> batch;
  batch.reserve(static_cast<std::size_t>(n_speakers));
  for (int i = 0; i < n_speakers; ++i) {
    const Speaker& s = speakers_[order[static_cast<std::size_t>(i)]];
    // Anchor uniform over the speaker's utterances.
    std::uniform_int_distribution<std::size_t> pick_utt(0, s.n_utterances - 1);
    std::size_t flat = pick_utt(rng);
    std::size_t video = 0;
    while (flat >= s.videos[video].utterances.size()) flat -= s.videos[video++].utterances.size();
    const auto& same = s.videos[video].utterances;
    const std::size_t anchor = same[flat];
    std::uniform_int_distribution<std::size_t> pick_same(0, same.size() - 1);
    const std::size_t positive = same[pick_same(rng)];

    std::size_t other_total = s.n_utterances - same.size();
    std::uniform_int_distribution<std::size_t> pick_other(0, other_total - 1);
    std::size_t k = pick_other(rng);
    std::size_t v = 0;
    for (;; ++v) {
      if (v == video) continue;
      if (k < s.videos[v].utterances.size()) break;
      k -= s.videos[v].utterances.size();
    }
    const std::size_t negative = s.videos[v].utterances[k];

    TripletSpec t;
    t.speaker_id = s.id;
    t.anchor = draw_segment(anchor, rng);
    t.positive = draw_segment(positive, rng);
    t.negative = draw_segment(negative, rng);
    batch.push_back(std::move(t));
  }
  return batch;
}

std::vector<TripletSpec> sample_triplet_batch(const Manifest& manifest, int n_speakers,
                                              double segment_s, Rng& rng) {
  return TripletSampler(manifest, segment_s).sample(n_speakers, rng);
}

TrialList build_env_probe_trials(const Manifest& manifest, std::size_t n_pairs,
                                 std::uint64_t seed) {
  std::map<std::string, std::vector<const UtteranceRef*>> by_speaker;
  for (const auto& u : manifest.utterances()) by_speaker[u.speaker_id].push_back(&u);

  std::vector<Trial> same_video, other_video;
  for (const auto& [speaker, utts] : by_speaker) {
    for (std::size_t i = 0; i < utts.size(); ++i) {
      for (std::size_t j = i + 1; j < utts.size(); ++j) {
        const bool same = utts[i]->video_id == utts[j]->video_id;
        (same ? same_video : other_video).push_back({same ? 1 : 0, utts[i]->utt_id, utts[j]->utt_id});
      }
    }
  }
  const std::size_t n_pos = n_pairs / 2;
  const std::size_t n_neg = n_pairs - n_pos;
  if (n_pos > same_video.size() || n_neg > other_video.size()) {
    const std::size_t max_pairs = std::min(2 * same_video.size() + 1, 2 * other_video.size());
    throw Error("cannot build " + std::to_string(n_pairs) + " balanced env-probe pairs (" +
                std::to_string(same_video.size()) + " same-video, " +
                std::to_string(other_video.size()) + " cross-video available); achievable maximum is " +
                std::to_string(std::min(max_pairs, same_video.size() + other_video.size())));
  }
  Rng rng(derive_seed(seed, "trials/env_probe"));
  std::shuffle(same_video.begin(), same_video.end(), rng);
  std::shuffle(other_video.begin(), other_video.end(), rng);
  TrialList out;
  out.kind = TrialKind::env_probe;
  out.pairs.assign(same_video.begin(), same_video.begin() + static_cast<long>(n_pos));
  out.pairs.insert(out.pairs.end(), other_video.begin(), other_video.begin() + static_cast<long>(n_neg));
  std::shuffle(out.pairs.begin(), out.pairs.end(), rng);
  return out;
}

TrialList build_verification_trials(const Manifest& manifest, std::size_t n_pairs,
                                    std::uint64_t seed) {
  const auto& utts = manifest.utterances();
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < utts.size(); ++i) by_speaker[utts[i].speaker_id].push_back(i);
  std::size_t max_pos = 0;
  std::vector<const std::vector<std::size_t>*> multi;
  for (const auto& [s, idx] : by_speaker) {
    max_pos += idx.size() * (idx.size() - 1) / 2;
    if (idx.size() >= 2) multi.push_back(&idx);
  }
  const std::size_t n = utts.size();
  const std::size_t max_neg = n * (n - 1) / 2 - max_pos;
  const std::size_t n_pos = n_pairs / 2;
  const std::size_t n_neg = n_pairs - n_pos;
  if (n_pos > max_pos || n_neg > max_neg) {
    throw Error("cannot build " + std::to_string(n_pairs) + " verification pairs (" +
                std::to_string(max_pos) + " same-speaker, " + std::to_string(max_neg) +
                " different-speaker available)");
  }
  Rng rng(derive_seed(seed, "trials/verif"));
  std::set<std::pair<std::size_t, std::size_t>> seen;
  TrialList out;
  out.kind = TrialKind::speaker_verif;
  auto add = [&](std::size_t a, std::size_t b, int label) {
    if (a > b) std::swap(a, b);
    if (!seen.insert({a, b}).second) return false;
    out.pairs.push_back({label, utts[a].utt_id, utts[b].utt_id});
    return true;
  };
  std::uniform_int_distribution<std::size_t> pick_speaker(0, multi.empty() ? 0 : multi.size() - 1);
  for (std::size_t made = 0; made < n_pos;) {
    const auto& idx = *multi[pick_speaker(rng)];
    std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
    const std::size_t a = pick(rng), b = pick(rng);
    if (a != b && add(idx[a], idx[b], 1)) ++made;
  }
  std::uniform_int_distribution<std::size_t> pick_any(0, n - 1);
  for (std::size_t made = 0; made < n_neg;) {
    const std::size_t a = pick_any(rng), b = pick_any(rng);
    if (utts[a].speaker_id != utts[b].speaker_id && add(a, b, 0)) ++made;
  }
  std::shuffle(out.pairs.begin(), out.pairs.end(), rng);
  return out;
}

void save_trials(const fs::path& file, const TrialList& trials) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write trial list '" + file.string() + "'");
  for (const auto& t : trials.pairs) {
    out << t.label << ' ' << t.utt_a << ".wav " << t.utt_b << ".wav\n";
  }
  if (!out) throw Error("write failed for trial list '" + file.string() + "'");
}

TrialList load_trials(const fs::path& file, TrialKind kind) {
  std::ifstream in(file);
  if (!in) throw Error("cannot read trial list '" + file.string() + "'");
  TrialList out;
  out.kind = kind;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto f = split_ws(line);
    if (f.empty()) continue;
    if (f.size() != 3 || (f[0] != "0" && f[0] != "1")) {
      throw Error(file.string() + ":" + std::to_string(line_no) + ": expected 'label path_a path_b'");
    }
    out.pairs.push_back({f[0] == "1" ? 1 : 0, strip_extension(f[1]), strip_extension(f[2])});
  }
  return out;
}

}  // namespace envadv
