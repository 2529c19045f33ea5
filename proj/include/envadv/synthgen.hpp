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

#ifndef ENVADV_SYNTHGEN_HPP_
#define ENVADV_SYNTHGEN_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "envadv/corpus.hpp"

namespace envadv::synth {

/// Toy corpus of harmonic "speakers" recorded in per-video "environments".
struct SynthSpec {
  int n_speakers = 20;
  int n_envs_per_speaker = 4;
  int utts_per_env = 30;
  double utt_len_s = 3.0;
  int sample_rate = 16000;
  std::uint64_t seed = 7;
  /// Size of the shared pool of environment prototypes (4..8).
  int n_prototypes = 8;
  double snr_db_min = 15.0;
  double snr_db_max = 25.0;

  /// Throws envadv::Error describing the first violated constraint.
  void validate() const;
  std::size_t total_utterances() const {
    return static_cast<std::size_t>(n_speakers) * n_envs_per_speaker * utts_per_env;
  }
};

struct Speaker {
  std::string id;
  double f0_hz = 0;
  std::vector<double> formants_hz;
  std::vector<double> bandwidths_hz;
  double tilt = 0;  // one-pole glottal lowpass coefficient
};

/// One recording condition: linear channel, reverberation tail, and a
/// stationary noise signature (spectral colour plus a narrowband hum).
struct Environment {
  std::vector<float> channel;   // FIR taps
  std::vector<float> reverb;    // impulse response including the direct path
  double noise_colour = 0;      // one-pole coefficient applied to white noise
  double hum_hz = 0;
  double hum_level = 0;         // hum RMS relative to broadband noise RMS
};

struct Video {
  std::string id;
  int prototype = 0;
  double snr_db = 0;
};

/// Everything the generator decides before rendering audio.
struct Design {
  std::vector<Speaker> speakers;
  std::vector<Environment> prototypes;
  std::vector<std::vector<Video>> videos;  // [speaker][video]
};

Design make_design(const SynthSpec& spec);

/// Renders one utterance; depends only on (spec, design, speaker, video, index).
std::vector<float> render_utterance(const SynthSpec& spec, const Design& design, int speaker, int video,
                                    int index);

struct ProbeResult {
  double accuracy = 0;
  std::size_t n = 0;
};

/// Leave-one-out nearest-centroid classification of each utterance's video
/// from its mean log-mel vector, within each speaker.
ProbeResult environment_probe(const Manifest& manifest);

struct GenerateResult {
  Manifest manifest;
  ProbeResult probe;
};

/// Writes speaker/video/utterance.wav files and `synth-spec.json` under
/// `out_dir`, then rescans it. Output does not depend on `workers`.
GenerateResult generate(const SynthSpec& spec, const std::filesystem::path& out_dir, int workers = 1,
                        bool run_probe = true);

std::string spec_to_json(const SynthSpec& spec);
SynthSpec spec_from_json(const std::string& text);

}  // namespace envadv::synth

#endif  // ENVADV_SYNTHGEN_HPP_
