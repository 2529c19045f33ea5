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

// Small on-disk corpora for tests.

#ifndef ENVADV_TESTS_FIXTURES_HPP_
#define ENVADV_TESTS_FIXTURES_HPP_

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>

#include "envadv/wav.hpp"

namespace envadv::testing {

inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("envadv-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// speakers x videos x utts files of coloured noise at `<root>/idNNNNN/vidV/UUUUU.wav`.
/// Each (speaker, video) gets its own spectral tilt so the files are not identical.
inline void write_noise_corpus(const std::filesystem::path& root, int speakers, int videos, int utts,
                               double seconds, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  const auto n = static_cast<std::size_t>(seconds * 16000);
  for (int s = 0; s < speakers; ++s) {
    char spk[16];
    std::snprintf(spk, sizeof spk, "id%05d", 10001 + s);
    for (int v = 0; v < videos; ++v) {
      const double pole = 0.1 + 0.8 * ((s * videos + v) % 7) / 7.0;
      for (int u = 0; u < utts; ++u) {
        char name[16];
        std::snprintf(name, sizeof name, "%05d.wav", u + 1);
        std::vector<float> x(n);
        double state = 0;
        for (auto& v_ : x) {
          state = pole * state + (1 - pole) * g(rng);
          v_ = static_cast<float>(0.2 * state);
        }
        const auto dir = root / spk / ("vid" + std::to_string(v));
        std::filesystem::create_directories(dir);
        write_wav_pcm16(dir / name, x, 16000);
      }
    }
  }
}

}  // namespace envadv::testing

#endif  // ENVADV_TESTS_FIXTURES_HPP_
