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

#ifndef ENVADV_WAV_HPP_
#define ENVADV_WAV_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace envadv {

struct WavInfo {
  int sample_rate = 0;
  int channels = 0;
  int bits_per_sample = 0;
  bool is_float = false;
  std::size_t frames = 0;  // samples per channel
  std::uint64_t data_offset = 0;

  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(frames) / sample_rate : 0.0;
  }
};

struct Waveform {
  std::vector<float> samples;
  int sample_rate = 16000;

  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

struct LoadOptions {
  /// Average channels instead of rejecting multi-channel input.
  bool downmix = false;
  /// Resample to this rate when the file differs; 0 keeps the file's rate.
  int target_rate = 16000;
};

/// Parses the RIFF header. Throws envadv::Error naming the path.
WavInfo read_wav_info(const std::filesystem::path& path);

/// Reads PCM (8/16/24/32-bit) or IEEE-float WAV as floats in [-1, 1].
Waveform load_waveform(const std::filesystem::path& path,
                       const LoadOptions& options = {});

/// Reads `count` frames starting at `first` without touching the rest of the
/// file. Only valid for mono files at the requested rate.
Waveform load_waveform_range(const std::filesystem::path& path,
                             std::size_t first, std::size_t count);

/// Mono PCM16, samples clipped to [-1, 1].
void write_wav_pcm16(const std::filesystem::path& path,
                     std::span<const float> samples, int sample_rate);

/// Windowed-sinc sample-rate conversion.
std::vector<float> resample(std::span<const float> samples, int from_rate,
                            int to_rate);

}  // namespace envadv

#endif  // ENVADV_WAV_HPP_
