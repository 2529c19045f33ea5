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

#include "envadv/dsp.hpp"

#include <sstream>

namespace envadv {

std::string_view to_string(FeatureKind kind) {
  return kind == FeatureKind::spectrogram257 ? "spectrogram257" : "fbank40";
}

FeatureKind parse_feature_kind(std::string_view text) {
  if (text == "spectrogram257") return FeatureKind::spectrogram257;
  if (text == "fbank40") return FeatureKind::fbank40;
  throw Error("unknown feature kind '" + std::string(text) + "'");
}

std::uint64_t DspConfig::hash(FeatureKind kind) const {
  std::ostringstream s;
  s.precision(17);
  s << "kind=" << to_string(kind) << ";sr=" << sample_rate << ";win=" << win_length
    << ";hop=" << hop_length << ";nfft=" << fft_size << ";mels=" << n_mels << ";fmin=" << fmin_hz
    << ";fmax=" << fmax_hz << ";floor=" << log_floor
    << ";mvn=" << (mvn_mode == MvnMode::crop ? "crop" : "utterance") << ";seg=" << segment_s;
  return fnv1a(s.str());
}

}  // namespace envadv
