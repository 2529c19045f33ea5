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

#include "envadv/synthgen.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <thread>

#include "envadv/dsp.hpp"
#include "envadv/wav.hpp"

namespace envadv::synth {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

/// Linear-phase FIR whose magnitude follows a smooth random log-spectrum.
std::vector<float> random_channel(Rng& rng, int sample_rate) {
  constexpr int kTaps = 129;
  constexpr int kFft = 512;
  const double nyquist = sample_rate / 2.0;
  const double slope_db = uniform(rng, -6.0, 6.0);
  struct Bump {
    double centre, width, gain_db;
  };
  std::vector<Bump> bumps(3);
  for (auto& b : bumps) b = {uniform(rng, 100.0, nyquist - 500.0), uniform(rng, 200.0, 1500.0), uniform(rng, -9.0, 9.0)};
  std::vector<double> mag(kFft / 2 + 1);
  for (std::size_t k = 0; k < mag.size(); ++k) {
    const double f = nyquist * static_cast<double>(k) / (kFft / 2);
    double db = slope_db * (f / nyquist - 0.5);
    for (const auto& b : bumps) db += b.gain_db * std::exp(-0.5 * std::pow((f - b.centre) / b.width, 2));
    mag[k] = std::pow(10.0, db / 20.0);
  }
  // Zero-phase impulse response by direct inverse DFT of the real spectrum.
  std::vector<float> taps(kTaps);
  const int half = kTaps / 2;
  for (int n = -half; n <= half; ++n) {
    double acc = mag[0];
    for (int k = 1; k < kFft / 2; ++k) acc += 2.0 * mag[static_cast<std::size_t>(k)] * std::cos(2.0 * kPi * k * n / kFft);
    acc += mag[kFft / 2] * std::cos(kPi * n);
    const double window = 0.54 + 0.46 * std::cos(kPi * n / half);
    taps[static_cast<std::size_t>(n + half)] = static_cast<float>(acc / kFft * window);
  }
  return taps;
}

/// Direct path plus an exponentially decaying noise tail.
std::vector<float> random_reverb(Rng& rng, int sample_rate) {
  const double rt60 = uniform(rng, 0.15, 0.6);
  const double drr_db = uniform(rng, 0.0, 8.0);
  const auto delay = static_cast<std::size_t>(0.0025 * sample_rate);
  const auto length = static_cast<std::size_t>(rt60 * sample_rate);
  std::vector<float> h(delay + length, 0.0f);
  h[0] = 1.0f;
  std::normal_distribution<double> gauss(0.0, 1.0);
  double energy = 0.0;
  std::vector<double> tail(length);
  for (std::size_t n = 0; n < length; ++n) {
    tail[n] = gauss(rng) * std::exp(-6.908 * static_cast<double>(n) / (rt60 * sample_rate));
    energy += tail[n] * tail[n];
  }
  const double scale = std::sqrt(std::pow(10.0, -drr_db / 10.0) / energy);
  for (std::size_t n = 0; n < length; ++n) h[delay + n] = static_cast<float>(tail[n] * scale);
  return h;
}

double rms(const std::vector<float>& x) {
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * v;
  return std::sqrt(acc / static_cast<double>(std::max<std::size_t>(1, x.size())));
}

/// 0/1 syllable mask with 10 ms raised-cosine edges and per-syllable level.
std::vector<double> syllable_envelope(Rng& rng, std::size_t n, int sample_rate) {
  std::vector<double> env(n, 0.0);
  const auto ramp = static_cast<std::size_t>(0.010 * sample_rate);
  auto pos = static_cast<std::size_t>(uniform(rng, 0.05, 0.2) * sample_rate);
  while (pos < n) {
    const auto len = static_cast<std::size_t>(uniform(rng, 0.12, 0.35) * sample_rate);
    const double level = uniform(rng, 0.5, 1.0);
    for (std::size_t i = 0; i < len && pos + i < n; ++i) {
      double g = 1.0;
      if (i < ramp) g = 0.5 - 0.5 * std::cos(kPi * static_cast<double>(i) / ramp);
      if (len - i <= ramp) g = std::min(g, 0.5 - 0.5 * std::cos(kPi * static_cast<double>(len - i) / ramp));
      env[pos + i] = level * g;
    }
    pos += len + static_cast<std::size_t>(uniform(rng, 0.04, 0.15) * sample_rate);
  }
  return env;
}

void resonate(std::vector<double>& x, double freq, double bandwidth, int sample_rate) {
  const double r = std::exp(-kPi * bandwidth / sample_rate);
  const double c = 2.0 * r * std::cos(2.0 * kPi * freq / sample_rate);
  const double gain = 1.0 - r;
  double y1 = 0.0, y2 = 0.0;
  for (double& v : x) {
    const double y = gain * v + c * y1 - r * r * y2;
    y2 = y1;
    y1 = y;
    v = y;
  }
}

json design_json(const Design& d) {
  json speakers = json::array();
  for (std::size_t s = 0; s < d.speakers.size(); ++s) {
    json videos = json::array();
    for (const auto& v : d.videos[s]) videos.push_back({{"id", v.id}, {"prototype", v.prototype}, {"snr_db", v.snr_db}});
    speakers.push_back({{"id", d.speakers[s].id},
                        {"f0_hz", d.speakers[s].f0_hz},
                        {"formants_hz", d.speakers[s].formants_hz},
                        {"videos", videos}});
  }
  json protos = json::array();
  for (const auto& p : d.prototypes) {
    protos.push_back({{"channel_taps", p.channel.size()},
                      {"reverb_taps", p.reverb.size()},
                      {"noise_colour", p.noise_colour},
                      {"hum_hz", p.hum_hz},
                      {"hum_level", p.hum_level}});
  }
  return {{"speakers", speakers}, {"prototypes", protos}};
}

}  // namespace

void SynthSpec::validate() const {
  if (n_speakers < 2) throw Error("synth: n_speakers must be at least 2");
  if (n_envs_per_speaker < 2) throw Error("synth: n_envs_per_speaker must be at least 2");
  if (utts_per_env < 1) throw Error("synth: utts_per_env must be positive");
  if (!(utt_len_s >= 2.5)) throw Error("synth: utt_len_s must be at least 2.5");
  if (sample_rate != 16000) throw Error("synth: only 16000 Hz output is supported");
  if (n_prototypes < 4 || n_prototypes > 8) throw Error("synth: n_prototypes must lie in [4, 8]");
  if (n_prototypes < n_envs_per_speaker) {
    throw Error("synth: n_prototypes (" + std::to_string(n_prototypes) + ") must be >= n_envs_per_speaker (" +
                std::to_string(n_envs_per_speaker) + ")");
  }
  if (!(snr_db_min <= snr_db_max)) throw Error("synth: snr_db_min exceeds snr_db_max");
}

Design make_design(const SynthSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "synth/design"));
  Design d;
  // f0 on a 9 Hz grid, assigned by a random permutation.
  std::vector<int> order(static_cast<std::size_t>(spec.n_speakers));
  for (int i = 0; i < spec.n_speakers; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);
  for (int s = 0; s < spec.n_speakers; ++s) {
    Speaker sp;
    char id[16];
    std::snprintf(id, sizeof id, "id1%04d", s + 1);
    sp.id = id;
    sp.f0_hz = 95.0 + 9.0 * order[static_cast<std::size_t>(s)];
    sp.formants_hz = {uniform(rng, 300, 850), uniform(rng, 900, 2300), uniform(rng, 2400, 3400),
                      uniform(rng, 3500, 4500)};
    for (double f : sp.formants_hz) sp.bandwidths_hz.push_back(50.0 + 0.05 * f + uniform(rng, 0, 40));
    sp.tilt = uniform(rng, 0.85, 0.97);
    d.speakers.push_back(std::move(sp));
  }
  Rng env_rng(derive_seed(spec.seed, "synth/environments"));
  for (int p = 0; p < spec.n_prototypes; ++p) {
    Environment e;
    e.channel = random_channel(env_rng, spec.sample_rate);
    e.reverb = random_reverb(env_rng, spec.sample_rate);
    e.noise_colour = uniform(env_rng, -0.8, 0.95);
    e.hum_hz = uniform(env_rng, 80.0, 3000.0);
    e.hum_level = uniform(env_rng, 0.3, 1.5);
    d.prototypes.push_back(std::move(e));
  }
  // Channel assignment uses its own stream so it is independent of f0.
  Rng video_rng(derive_seed(spec.seed, "synth/videos"));
  for (int s = 0; s < spec.n_speakers; ++s) {
    std::vector<int> pool(static_cast<std::size_t>(spec.n_prototypes));
    for (int p = 0; p < spec.n_prototypes; ++p) pool[static_cast<std::size_t>(p)] = p;
    std::shuffle(pool.begin(), pool.end(), video_rng);
    std::vector<Video> vids;
    for (int v = 0; v < spec.n_envs_per_speaker; ++v) {
      char id[16];
      std::snprintf(id, sizeof id, "vid%02d", v);
      vids.push_back({id, pool[static_cast<std::size_t>(v)], uniform(video_rng, spec.snr_db_min, spec.snr_db_max)});
    }
    d.videos.push_back(std::move(vids));
  }
  return d;
}

std::vector<float> render_utterance(const SynthSpec& spec, const Design& design, int speaker, int video,
                                    int index) {
  const auto key = static_cast<std::uint64_t>((speaker * spec.n_envs_per_speaker + video) * spec.utts_per_env + index);
  Rng rng(derive_seed(spec.seed, "synth/utterance", key));
  const int sr = spec.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(spec.utt_len_s * sr));
  const Speaker& sp = design.speakers[static_cast<std::size_t>(speaker)];
  const Video& vid = design.videos[static_cast<std::size_t>(speaker)][static_cast<std::size_t>(video)];
  const Environment& env = design.prototypes[static_cast<std::size_t>(vid.prototype)];

  const double f0 = sp.f0_hz * uniform(rng, 0.98, 1.02);
  const double formant_scale = uniform(rng, 0.96, 1.04);
  const double vibrato_hz = uniform(rng, 2.0, 5.0);
  const double vibrato_phase = uniform(rng, 0.0, 2.0 * kPi);
  const std::vector<double> envelope = syllable_envelope(rng, n, sr);

  // Impulse train with fractional placement, gated by the syllable envelope.
  std::vector<double> x(n, 0.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double phase = uniform(rng, 0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    const double f = f0 * (1.0 + 0.04 * std::sin(2.0 * kPi * vibrato_hz * t + vibrato_phase));
    phase += f / sr;
    if (phase >= 1.0) {
      phase -= 1.0;
      const double frac = phase / (f / sr);
      x[i] += (1.0 - frac) * envelope[i];
      if (i + 1 < n) x[i + 1] += frac * envelope[i];
    }
    x[i] += 0.02 * gauss(rng) * envelope[i];
  }
  for (int pass = 0; pass < 2; ++pass) {
    double y = 0.0;
    for (double& v : x) v = y = (1.0 - sp.tilt) * v + sp.tilt * y;
  }
  for (std::size_t k = 0; k < sp.formants_hz.size(); ++k) {
    resonate(x, sp.formants_hz[k] * formant_scale, sp.bandwidths_hz[k], sr);
  }
  std::vector<float> speech(x.begin(), x.end());
  const double dry = rms(speech);
  if (dry > 0) {
    for (float& v : speech) v = static_cast<float>(v * 0.1 / dry);
  }
  speech = fir_filter(speech, env.channel);
  speech = fir_filter(speech, env.reverb);

  std::vector<float> noise(n);
  double y = 0.0;
  const double hum_phase = uniform(rng, 0.0, 2.0 * kPi);
  for (std::size_t i = 0; i < n; ++i) {
    y = (1.0 - std::abs(env.noise_colour)) * gauss(rng) + env.noise_colour * y;
    noise[i] = static_cast<float>(y);
  }
  const double broadband = rms(noise);
  for (std::size_t i = 0; i < n; ++i) {
    const double hum = env.hum_level * std::sqrt(2.0) *
                       std::sin(2.0 * kPi * env.hum_hz * static_cast<double>(i) / sr + hum_phase);
    noise[i] = static_cast<float>(noise[i] / broadband + hum);
  }
  const double noise_gain = rms(speech) / rms(noise) * std::pow(10.0, -vid.snr_db / 20.0);
  std::vector<float> out(n);
  float peak = 0.0f;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = speech[i] + static_cast<float>(noise_gain) * noise[i];
    peak = std::max(peak, std::abs(out[i]));
  }
  if (peak > 0.0f) {
    for (float& v : out) v *= 0.7f / peak;
  }
  return out;
}

ProbeResult environment_probe(const Manifest& manifest) {
  const DspConfig cfg;
  std::map<std::string, std::map<std::string, std::vector<Eigen::VectorXd>>> by_speaker;
  for (const auto& u : manifest.utterances()) {
    const Waveform w = load_waveform(u.path);
    const auto f = fbank<double>(w.samples, cfg);
    by_speaker[u.speaker_id][u.video_id].push_back(f.values.rowwise().mean());
  }
  ProbeResult result;
  std::size_t correct = 0;
  for (const auto& [speaker, videos] : by_speaker) {
    if (videos.size() < 2) continue;
    std::map<std::string, Eigen::VectorXd> sums;
    for (const auto& [vid, xs] : videos) {
      Eigen::VectorXd s = Eigen::VectorXd::Zero(xs.front().size());
      for (const auto& x : xs) s += x;
      sums[vid] = s;
    }
    for (const auto& [vid, xs] : videos) {
      for (const auto& x : xs) {
        double best = std::numeric_limits<double>::infinity();
        std::string guess;
        for (const auto& [other, s] : sums) {
          const auto count = static_cast<double>(videos.at(other).size());
          Eigen::VectorXd centroid = s / count;
          if (other == vid) {
            if (count < 2) continue;
            centroid = (s - x) / (count - 1);
          }
          const double d = (x - centroid).squaredNorm();
          if (d < best) {
            best = d;
            guess = other;
          }
        }
        correct += guess == vid;
        ++result.n;
      }
    }
  }
  result.accuracy = result.n ? static_cast<double>(correct) / static_cast<double>(result.n) : 0.0;
  return result;
}

std::string spec_to_json(const SynthSpec& s) {
  const json j = {{"n_speakers", s.n_speakers},     {"n_envs_per_speaker", s.n_envs_per_speaker},
                  {"utts_per_env", s.utts_per_env}, {"utt_len_s", s.utt_len_s},
                  {"sample_rate", s.sample_rate},   {"seed", s.seed},
                  {"n_prototypes", s.n_prototypes}, {"snr_db_min", s.snr_db_min},
                  {"snr_db_max", s.snr_db_max}};
  return j.dump(2);
}

SynthSpec spec_from_json(const std::string& text) {
  const json j = json::parse(text);
  SynthSpec s;
  s.n_speakers = j.value("n_speakers", s.n_speakers);
  s.n_envs_per_speaker = j.value("n_envs_per_speaker", s.n_envs_per_speaker);
  s.utts_per_env = j.value("utts_per_env", s.utts_per_env);
  s.utt_len_s = j.value("utt_len_s", s.utt_len_s);
  s.sample_rate = j.value("sample_rate", s.sample_rate);
  s.seed = j.value("seed", s.seed);
  s.n_prototypes = j.value("n_prototypes", s.n_prototypes);
  s.snr_db_min = j.value("snr_db_min", s.snr_db_min);
  s.snr_db_max = j.value("snr_db_max", s.snr_db_max);
  return s;
}

GenerateResult generate(const SynthSpec& spec, const fs::path& out_dir, int workers, bool run_probe) {
  const Design design = make_design(spec);
  const std::size_t total = spec.total_utterances();
  for (int s = 0; s < spec.n_speakers; ++s) {
    for (int v = 0; v < spec.n_envs_per_speaker; ++v) {
      fs::create_directories(out_dir / design.speakers[static_cast<std::size_t>(s)].id /
                             design.videos[static_cast<std::size_t>(s)][static_cast<std::size_t>(v)].id);
    }
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t k = next++; k < total && !failed; k = next++) {
      const int i = static_cast<int>(k % static_cast<std::size_t>(spec.utts_per_env));
      const int v = static_cast<int>((k / static_cast<std::size_t>(spec.utts_per_env)) %
                                     static_cast<std::size_t>(spec.n_envs_per_speaker));
      const int s = static_cast<int>(k / (static_cast<std::size_t>(spec.utts_per_env) * spec.n_envs_per_speaker));
      try {
        char name[32];
        std::snprintf(name, sizeof name, "%05d.wav", i + 1);
        const fs::path file = out_dir / design.speakers[static_cast<std::size_t>(s)].id /
                              design.videos[static_cast<std::size_t>(s)][static_cast<std::size_t>(v)].id / name;
        write_wav_pcm16(file, render_utterance(spec, design, s, v, i), spec.sample_rate);
      } catch (const std::exception& e) {
        std::lock_guard lock(failure_mutex);
        failure = e.what();
        failed = true;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < std::max(1, workers); ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failed) throw Error("synth: " + failure);

  GenerateResult result;
  result.manifest = scan_corpus(out_dir);
  json record = json::parse(spec_to_json(spec));
  if (run_probe) {
    result.probe = environment_probe(result.manifest);
    record["environment_probe_accuracy"] = result.probe.accuracy;
  }
  record["design"] = design_json(design);
  std::ofstream out(out_dir / "synth-spec.json");
  out << record.dump(2) << '\n';
  if (!out) throw Error("synth: cannot write " + (out_dir / "synth-spec.json").string());
  return result;
}

}  // namespace envadv::synth
