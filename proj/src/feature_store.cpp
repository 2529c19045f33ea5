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

#include "envadv/feature_store.hpp"

#include <cstdlib>
#include <fstream>

#include "envadv/wav.hpp"

namespace envadv {
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'E', 'N', 'V', 'F', 'E', 'A', 'T', '1'};

std::shared_ptr<const Eigen::MatrixXf> read_cache(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) return nullptr;
  char magic[8];
  std::int64_t rows = 0, cols = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&rows), sizeof rows);
  in.read(reinterpret_cast<char*>(&cols), sizeof cols);
  if (!in || std::string(magic, 8) != std::string(kMagic, 8) || rows <= 0 || cols <= 0) return nullptr;
  auto m = std::make_shared<Eigen::MatrixXf>(rows, cols);
  in.read(reinterpret_cast<char*>(m->data()), static_cast<std::streamsize>(sizeof(float) * rows * cols));
  if (!in) return nullptr;
  return m;
}

void write_cache(const fs::path& file, const Eigen::MatrixXf& m) {
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    const std::int64_t rows = m.rows(), cols = m.cols();
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
    out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(float) * m.size()));
    if (!out) {
      warn("feature cache write failed for " + file.string());
      return;
    }
  }
  std::error_code ec;
  fs::rename(tmp, file, ec);
  if (ec) warn("feature cache rename failed for " + file.string() + ": " + ec.message());
}

}  // namespace

std::optional<fs::path> cache_dir_from_env() {
  const char* dir = std::getenv("ENVADV_CACHE_DIR");
  if (!dir || !*dir) return std::nullopt;
  return fs::path(dir);
}

FeatureStore::FeatureStore(Manifest manifest, FeatureKind kind, DspConfig cfg, std::optional<fs::path> cache_dir,
                           std::size_t memory_limit_bytes)
    : manifest_(std::move(manifest)),
      kind_(kind),
      cfg_(cfg),
      cache_dir_(std::move(cache_dir)),
      memory_limit_(memory_limit_bytes) {
  if (cache_dir_) fs::create_directories(*cache_dir_);
}

fs::path FeatureStore::cache_file(const std::string& utt_id) const {
  if (!cache_dir_) throw Error("feature store has no cache directory");
  return *cache_dir_ / (hex64(fnv1a(utt_id)) + "_" + std::string(to_string(kind_)) + "_" + hex64(dsp_hash()) + ".feat");
}

void FeatureStore::set_transform(WaveTransform transform) {
  std::lock_guard lock(mutex_);
  transform_ = std::move(transform);
  memo_.clear();
  memory_used_ = 0;
}

std::vector<float> FeatureStore::load(const UtteranceRef& u) const {
  Waveform w = load_waveform(u.path);
  if (transform_) transform_(u, w.samples);
  return std::move(w.samples);
}

std::shared_ptr<const FeatureStore::Matrix> FeatureStore::compute(const UtteranceRef& u) const {
  const bool use_cache = cache_dir_ && !transform_;
  if (use_cache) {
    if (auto m = read_cache(cache_file(u.utt_id))) return m;
  }
  auto m = std::make_shared<Matrix>(features<float>(load(u), kind_, cfg_).values);
  if (use_cache) write_cache(cache_file(u.utt_id), *m);
  return m;
}

std::shared_ptr<const FeatureStore::Matrix> FeatureStore::full(const std::string& utt_id) {
  {
    std::lock_guard lock(mutex_);
    if (auto it = memo_.find(utt_id); it != memo_.end()) {
      ++hits_;
      return it->second;
    }
  }
  auto m = compute(manifest_.at(utt_id));
  std::lock_guard lock(mutex_);
  const std::size_t bytes = sizeof(float) * static_cast<std::size_t>(m->size());
  if (memory_used_ + bytes <= memory_limit_ && memo_.emplace(utt_id, m).second) memory_used_ += bytes;
  return m;
}

FeatureSegment<float> FeatureStore::segment(const std::string& utt_id, double offset_s) {
  const UtteranceRef& u = manifest_.at(utt_id);
  const auto n_samples = static_cast<std::size_t>(std::llround(u.duration_s * cfg_.sample_rate));
  const CropWindow w = crop_window(n_samples, cfg_.sample_rate, offset_s, cfg_.segment_s);
  const Eigen::Index frames = num_frames(w.count, cfg_);
  FeatureSegment<float> seg;
  seg.kind = kind_;
  seg.sample_rate = cfg_.sample_rate;
  seg.frame_shift_s = static_cast<double>(cfg_.hop_length) / cfg_.sample_rate;
  seg.frame_len_s = static_cast<double>(cfg_.win_length) / cfg_.sample_rate;
  const auto hop = static_cast<std::size_t>(cfg_.hop_length);
  if (cfg_.mvn_mode == MvnMode::utterance) {
    const auto f = full(utt_id);
    FeatureSegment<float> whole = seg;
    whole.values = *f;
    whole = mvn(std::move(whole));
    const Eigen::Index first = std::min<Eigen::Index>(static_cast<Eigen::Index>(w.first / hop), f->cols() - frames);
    seg.values = whole.values.middleCols(first, frames);
    return seg;
  }
  if (w.first % hop == 0) {
    const auto f = full(utt_id);
    const auto first = static_cast<Eigen::Index>(w.first / hop);
    if (first + frames <= f->cols()) {
      seg.values = f->middleCols(first, frames);
      return mvn(std::move(seg));
    }
  }
  const std::vector<float> wave = load(u);
  if (wave.size() < w.first + w.count) {
    throw Error("'" + u.path.string() + "' is shorter than its manifest duration");
  }
  const std::vector<float> piece(wave.begin() + static_cast<long>(w.first),
                                 wave.begin() + static_cast<long>(w.first + w.count));
  return mvn(features<float>(piece, kind_, cfg_));
}

}  // namespace envadv
