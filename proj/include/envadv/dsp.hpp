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

#ifndef ENVADV_DSP_HPP_
#define ENVADV_DSP_HPP_

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "envadv/common.hpp"

namespace envadv {

enum class FeatureKind { spectrogram257, fbank40 };

std::string_view to_string(FeatureKind kind);
FeatureKind parse_feature_kind(std::string_view text);

/// Where the normalisation statistics come from when cropping: the crop
/// itself, or the whole utterance before the crop is taken.
enum class MvnMode { crop, utterance };

struct DspConfig {
  int sample_rate = 16000;
  int win_length = 400;   // 25 ms
  int hop_length = 160;   // 10 ms
  int fft_size = 512;
  int n_mels = 40;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  double log_floor = 1e-10;
  MvnMode mvn_mode = MvnMode::crop;
  double segment_s = 2.0;

  int n_bins() const { return fft_size / 2 + 1; }
  int n_features(FeatureKind kind) const {
    return kind == FeatureKind::spectrogram257 ? n_bins() : n_mels;
  }
  /// Stable digest of every field that changes feature values.
  std::uint64_t hash(FeatureKind kind) const;
};

/// [F x T] time-frequency matrix; rows are frequency bins.
template <typename Scalar>
struct FeatureSegment {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> values;
  FeatureKind kind = FeatureKind::fbank40;
  int sample_rate = 16000;
  double frame_shift_s = 0.010;
  double frame_len_s = 0.025;

  Eigen::Index bins() const { return values.rows(); }
  Eigen::Index frames() const { return values.cols(); }
};

/// floor((n - win) / hop) + 1, or 0 when shorter than one window.
inline Eigen::Index num_frames(std::size_t n_samples, const DspConfig& cfg = {}) {
  if (n_samples < static_cast<std::size_t>(cfg.win_length)) return 0;
  return static_cast<Eigen::Index>((n_samples - cfg.win_length) / cfg.hop_length) + 1;
}

namespace detail {

inline Eigen::VectorXd hamming(int length) {
  Eigen::VectorXd w(length);
  for (int n = 0; n < length; ++n) {
    w[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (length - 1));
  }
  return w;
}

/// Squared-magnitude or magnitude STFT, [n_bins x T], computed in double.
inline Eigen::MatrixXd stft_magnitude(std::span<const float> samples, const DspConfig& cfg,
                                      bool power) {
  const Eigen::Index frames = num_frames(samples.size(), cfg);
  if (frames == 0) {
    throw Error("input of " + std::to_string(samples.size()) +
                " samples is shorter than one analysis window (" +
                std::to_string(cfg.win_length) + ")");
  }
  const Eigen::VectorXd window = hamming(cfg.win_length);
  Eigen::FFT<double> fft;
  std::vector<double> frame(static_cast<std::size_t>(cfg.fft_size), 0.0);
  std::vector<std::complex<double>> spectrum;
  Eigen::MatrixXd out(cfg.n_bins(), frames);
  for (Eigen::Index t = 0; t < frames; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * cfg.hop_length;
    for (int n = 0; n < cfg.win_length; ++n) frame[n] = samples[start + n] * window[n];
    fft.fwd(spectrum, frame);
    for (int k = 0; k < cfg.n_bins(); ++k) {
      const double p = std::norm(spectrum[static_cast<std::size_t>(k)]);
      out(k, t) = power ? p : std::sqrt(p);
    }
  }
  return out;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace detail

/// Triangular mel filters over the FFT bins, [n_mels x n_bins].
inline Eigen::MatrixXd mel_filterbank(const DspConfig& cfg = {}) {
  const double lo = detail::hz_to_mel(cfg.fmin_hz);
  const double hi = detail::hz_to_mel(cfg.fmax_hz);
  Eigen::VectorXd edges(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i) {
    edges[i] = detail::mel_to_hz(lo + (hi - lo) * i / (cfg.n_mels + 1));
  }
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(cfg.n_mels, cfg.n_bins());
  for (int m = 0; m < cfg.n_mels; ++m) {
    for (int k = 0; k < cfg.n_bins(); ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
      const double up = (f - edges[m]) / (edges[m + 1] - edges[m]);
      const double down = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
      fb(m, k) = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

/// Magnitude spectrogram, 512-point FFT of Hamming-windowed 400-sample frames.
template <typename Scalar>
FeatureSegment<Scalar> spectrogram(std::span<const float> samples, const DspConfig& cfg = {}) {
  FeatureSegment<Scalar> seg;
  seg.values = detail::stft_magnitude(samples, cfg, false).cast<Scalar>();
  seg.kind = FeatureKind::spectrogram257;
  seg.sample_rate = cfg.sample_rate;
  seg.frame_shift_s = static_cast<double>(cfg.hop_length) / cfg.sample_rate;
  seg.frame_len_s = static_cast<double>(cfg.win_length) / cfg.sample_rate;
  return seg;
}

/// Log mel filterbank energies of the power spectrum, floored at log_floor.
template <typename Scalar>
FeatureSegment<Scalar> fbank(std::span<const float> samples, const DspConfig& cfg = {}) {
  const Eigen::MatrixXd power = detail::stft_magnitude(samples, cfg, true);
  const Eigen::MatrixXd energies = mel_filterbank(cfg) * power;
  FeatureSegment<Scalar> seg;
  seg.values = energies.cwiseMax(cfg.log_floor).array().log().matrix().cast<Scalar>();
  seg.kind = FeatureKind::fbank40;
  seg.sample_rate = cfg.sample_rate;
  seg.frame_shift_s = static_cast<double>(cfg.hop_length) / cfg.sample_rate;
  seg.frame_len_s = static_cast<double>(cfg.win_length) / cfg.sample_rate;
  return seg;
}

template <typename Scalar>
FeatureSegment<Scalar> features(std::span<const float> samples, FeatureKind kind,
                                const DspConfig& cfg = {}) {
  return kind == FeatureKind::spectrogram257 ? spectrogram<Scalar>(samples, cfg)
                                             : fbank<Scalar>(samples, cfg);
}

/// Per-row standardisation with population statistics. Rows whose variance
/// does not exceed `variance_floor` (exactly constant rows by default) become
/// zero. Statistics are accumulated in double.
template <typename Scalar>
FeatureSegment<Scalar> mvn(FeatureSegment<Scalar> seg, double variance_floor = 0.0) {
  auto& v = seg.values;
  if (v.cols() < 2) throw Error("mvn needs at least two frames");
  for (Eigen::Index f = 0; f < v.rows(); ++f) {
    const Eigen::VectorXd row = v.row(f).transpose().template cast<double>();
    const double mean = row.mean();
    const double var = (row.array() - mean).square().mean();
    const bool constant = row.maxCoeff() == row.minCoeff();
    if (constant || var <= variance_floor) {
      v.row(f).setZero();
      continue;
    }
    const double inv = 1.0 / std::sqrt(var);
    v.row(f) = ((row.array() - mean) * inv).matrix().transpose().template cast<Scalar>();
  }
  return seg;
}

/// Sample range [first, first + count) for a crop at `offset_s` seconds.
struct CropWindow {
  std::size_t first = 0;
  std::size_t count = 0;
};

/// Validates `offset_s + length_s <= duration` (to within half a sample).
inline CropWindow crop_window(std::size_t n_samples, int sample_rate, double offset_s,
                              double length_s) {
  const double duration = static_cast<double>(n_samples) / sample_rate;
  const double slack = 0.5 / sample_rate;
  if (!(offset_s >= -slack) || offset_s + length_s > duration + slack) {
    throw Error("crop [" + std::to_string(offset_s) + ", " + std::to_string(offset_s + length_s) +
                ") s is outside the " + std::to_string(duration) + " s signal");
  }
  CropWindow w;
  w.count = static_cast<std::size_t>(std::llround(length_s * sample_rate));
  if (w.count > n_samples) throw Error("crop longer than signal");
  const auto first = static_cast<std::size_t>(std::max(0LL, std::llround(offset_s * sample_rate)));
  w.first = std::min(first, n_samples - w.count);
  return w;
}

inline std::vector<float> crop(std::span<const float> samples, int sample_rate, double offset_s,
                               double length_s = 2.0) {
  const CropWindow w = crop_window(samples.size(), sample_rate, offset_s, length_s);
  return {samples.begin() + static_cast<long>(w.first),
          samples.begin() + static_cast<long>(w.first + w.count)};
}

/// Column slice of an already-extracted segment, offsets in seconds.
template <typename Scalar>
FeatureSegment<Scalar> crop(const FeatureSegment<Scalar>& seg, double offset_s, Eigen::Index frames) {
  const auto first = static_cast<Eigen::Index>(std::llround(offset_s / seg.frame_shift_s));
  if (first < 0 || first + frames > seg.frames()) {
    throw Error("feature crop of " + std::to_string(frames) + " frames at " +
                std::to_string(offset_s) + " s exceeds " + std::to_string(seg.frames()) + " frames");
  }
  FeatureSegment<Scalar> out = seg;
  out.values = seg.values.middleCols(first, frames);
  return out;
}

/// linspace(0, duration - length, count); a single zero offset when count == 1.
inline std::vector<double> evenly_spaced_offsets(double duration_s, double length_s, int count) {
  if (duration_s + 1e-9 < length_s) {
    throw Error("utterance of " + std::to_string(duration_s) + " s is shorter than the " +
                std::to_string(length_s) + " s crop");
  }
  const double span = std::max(0.0, duration_s - length_s);
  std::vector<double> offsets(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) offsets[i] = count == 1 ? 0.0 : span * i / (count - 1);
  return offsets;
}

/// Crop, extract and normalise one training/evaluation segment. With
/// MvnMode::utterance the statistics come from the whole signal.
template <typename Scalar>
FeatureSegment<Scalar> segment_features(std::span<const float> samples, FeatureKind kind,
                                        double offset_s, const DspConfig& cfg = {}) {
  if (cfg.mvn_mode == MvnMode::crop) {
    const auto piece = crop(samples, cfg.sample_rate, offset_s, cfg.segment_s);
    return mvn(features<Scalar>(piece, kind, cfg));
  }
  const CropWindow w = crop_window(samples.size(), cfg.sample_rate, offset_s, cfg.segment_s);
  // Frame-aligned slice of the full-utterance features.
  const auto full = mvn(features<Scalar>(samples, kind, cfg));
  const Eigen::Index frames = num_frames(w.count, cfg);
  const Eigen::Index first = std::min<Eigen::Index>(
      static_cast<Eigen::Index>(w.first / static_cast<std::size_t>(cfg.hop_length)),
      full.frames() - frames);
  FeatureSegment<Scalar> out = full;
  out.values = full.values.middleCols(first, frames);
  return out;
}

/// Full linear convolution via FFT; output length a.size() + b.size() - 1.
inline std::vector<float> fft_convolve(std::span<const float> a, std::span<const float> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  std::size_t n = 1;
  while (n < out_len) n <<= 1;
  std::vector<double> x(n, 0.0), y(n, 0.0);
  std::copy(a.begin(), a.end(), x.begin());
  std::copy(b.begin(), b.end(), y.begin());
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> fx, fy;
  fft.fwd(fx, x);
  fft.fwd(fy, y);
  for (std::size_t k = 0; k < fx.size(); ++k) fx[k] *= fy[k];
  std::vector<double> z;
  fft.inv(z, fx);
  std::vector<float> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = static_cast<float>(z[i]);
  return out;
}

/// Causal FIR filtering, output truncated to the input length.
inline std::vector<float> fir_filter(std::span<const float> samples, std::span<const float> taps) {
  std::vector<float> y = fft_convolve(samples, taps);
  y.resize(samples.size());
  return y;
}

}  // namespace envadv

#endif  // ENVADV_DSP_HPP_
