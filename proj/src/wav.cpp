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

#include "envadv/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "envadv/common.hpp"

namespace envadv {
namespace {

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw Error(path.string() + ": " + what);
}

float decode_sample(const unsigned char* p, const WavInfo& info) {
  switch (info.bits_per_sample) {
    case 8:
      return (static_cast<float>(p[0]) - 128.0f) / 128.0f;
    case 16:
      return static_cast<float>(static_cast<std::int16_t>(le16(p))) / 32768.0f;
    case 24: {
      std::int32_t v = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
      if (v & 0x800000) v |= ~0xffffff;
      return static_cast<float>(v) / 8388608.0f;
    }
    case 32: {
      std::uint32_t raw = le32(p);
      if (info.is_float) {
        float f;
        std::memcpy(&f, &raw, sizeof f);
        return std::clamp(f, -1.0f, 1.0f);
      }
      return static_cast<float>(static_cast<double>(static_cast<std::int32_t>(raw)) /
                                2147483648.0);
    }
    default:
      return 0.0f;
  }
}

std::vector<float> read_frames(std::ifstream& in, const std::filesystem::path& path,
                               const WavInfo& info, std::size_t first,
                               std::size_t count, bool downmix) {
  const std::size_t bytes_per_sample = static_cast<std::size_t>(info.bits_per_sample) / 8;
  const std::size_t frame_bytes = bytes_per_sample * info.channels;
  std::vector<unsigned char> raw(count * frame_bytes);
  in.seekg(static_cast<std::streamoff>(info.data_offset + first * frame_bytes));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) fail(path, "truncated data chunk");

  std::vector<float> out(count);
  if (info.channels == 1) {
    for (std::size_t i = 0; i < count; ++i) out[i] = decode_sample(&raw[i * frame_bytes], info);
    return out;
  }
  if (!downmix) {
    fail(path, "expected mono audio, found " + std::to_string(info.channels) + " channels");
  }
  for (std::size_t i = 0; i < count; ++i) {
    double acc = 0.0;
    for (int c = 0; c < info.channels; ++c) {
      acc += decode_sample(&raw[i * frame_bytes + c * bytes_per_sample], info);
    }
    out[i] = static_cast<float>(acc / info.channels);
  }
  return out;
}

WavInfo parse_header(std::ifstream& in, const std::filesystem::path& path) {
  unsigned char riff[12];
  in.read(reinterpret_cast<char*>(riff), 12);
  if (in.gcount() != 12 || std::memcmp(riff, "RIFF", 4) != 0 ||
      std::memcmp(riff + 8, "WAVE", 4) != 0) {
    fail(path, "not a RIFF/WAVE file");
  }
  WavInfo info;
  bool have_fmt = false;
  std::uint64_t pos = 12;
  while (true) {
    unsigned char chunk[8];
    in.read(reinterpret_cast<char*>(chunk), 8);
    if (in.gcount() != 8) fail(path, "missing data chunk");
    const std::uint32_t size = le32(chunk + 4);
    pos += 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) fail(path, "short fmt chunk");
      std::vector<unsigned char> fmt(size);
      in.read(reinterpret_cast<char*>(fmt.data()), size);
      if (static_cast<std::uint32_t>(in.gcount()) != size) fail(path, "truncated fmt chunk");
      std::uint16_t format = le16(&fmt[0]);
      if (format == 0xfffe && size >= 26) format = le16(&fmt[24]);  // extensible
      info.channels = le16(&fmt[2]);
      info.sample_rate = static_cast<int>(le32(&fmt[4]));
      info.bits_per_sample = le16(&fmt[14]);
      info.is_float = format == 3;
      if (format != 1 && format != 3) fail(path, "unsupported WAV encoding " + std::to_string(format));
      if (info.is_float && info.bits_per_sample != 32) fail(path, "unsupported float width");
      if (info.bits_per_sample != 8 && info.bits_per_sample != 16 &&
          info.bits_per_sample != 24 && info.bits_per_sample != 32) {
        fail(path, "unsupported sample width " + std::to_string(info.bits_per_sample));
      }
      if (info.channels < 1 || info.sample_rate <= 0) fail(path, "invalid fmt chunk");
      have_fmt = true;
      if (size & 1) in.seekg(1, std::ios::cur);
      pos += size + (size & 1);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) fail(path, "data chunk before fmt chunk");
      info.data_offset = pos;
      const std::size_t frame_bytes =
          static_cast<std::size_t>(info.bits_per_sample / 8) * info.channels;
      info.frames = size / frame_bytes;
      return info;
    } else {
      const std::uint64_t skip = size + (size & 1);
      in.seekg(static_cast<std::streamoff>(skip), std::ios::cur);
      pos += skip;
    }
  }
}

std::ifstream open_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open file");
  return in;
}

}  // namespace

WavInfo read_wav_info(const std::filesystem::path& path) {
  auto in = open_binary(path);
  return parse_header(in, path);
}

Waveform load_waveform(const std::filesystem::path& path, const LoadOptions& options) {
  auto in = open_binary(path);
  const WavInfo info = parse_header(in, path);
  Waveform wave;
  wave.samples = read_frames(in, path, info, 0, info.frames, options.downmix);
  wave.sample_rate = info.sample_rate;
  if (options.target_rate > 0 && info.sample_rate != options.target_rate) {
    wave.samples = resample(wave.samples, info.sample_rate, options.target_rate);
    wave.sample_rate = options.target_rate;
  }
  return wave;
}

Waveform load_waveform_range(const std::filesystem::path& path, std::size_t first,
                             std::size_t count) {
  auto in = open_binary(path);
  const WavInfo info = parse_header(in, path);
  if (first + count > info.frames) {
    fail(path, "requested frames [" + std::to_string(first) + ", " +
                   std::to_string(first + count) + ") beyond " +
                   std::to_string(info.frames));
  }
  Waveform wave;
  wave.samples = read_frames(in, path, info, first, count, false);
  wave.sample_rate = info.sample_rate;
  return wave;
}

void write_wav_pcm16(const std::filesystem::path& path, std::span<const float> samples,
                     int sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for writing");
  auto put32 = [&](std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  auto put16 = [&](std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
  };
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  put32(36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put32(16);
  put16(1);
  put16(1);
  put32(static_cast<std::uint32_t>(sample_rate));
  put32(static_cast<std::uint32_t>(sample_rate * 2));
  put16(2);
  put16(16);
  out.write("data", 4);
  put32(data_bytes);
  std::vector<unsigned char> pcm(samples.size() * 2);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const float clipped = std::clamp(samples[i], -1.0f, 1.0f);
    const auto v = static_cast<std::int16_t>(std::lrint(clipped * 32767.0f));
    pcm[2 * i] = static_cast<unsigned char>(v & 0xff);
    pcm[2 * i + 1] = static_cast<unsigned char>((v >> 8) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(pcm.data()), static_cast<std::streamsize>(pcm.size()));
  if (!out) fail(path, "write failed");
}

std::vector<float> resample(std::span<const float> samples, int from_rate, int to_rate) {
  if (from_rate <= 0 || to_rate <= 0) throw Error("resample: rates must be positive");
  if (from_rate == to_rate) return {samples.begin(), samples.end()};
  const double ratio = static_cast<double>(to_rate) / from_rate;
  const double cutoff = std::min(1.0, ratio);  // relative to the input Nyquist
  constexpr int kZeroCrossings = 16;
  const double half_width = kZeroCrossings / cutoff;
  const auto n_out = static_cast<std::size_t>(std::floor(samples.size() * ratio));
  std::vector<float> out(n_out);
  const auto n_in = static_cast<long>(samples.size());
  for (std::size_t j = 0; j < n_out; ++j) {
    const double t = j / ratio;
    const long lo = std::max(0L, static_cast<long>(std::ceil(t - half_width)));
    const long hi = std::min(n_in - 1, static_cast<long>(std::floor(t + half_width)));
    double acc = 0.0;
    for (long i = lo; i <= hi; ++i) {
      const double x = (t - i) * cutoff;
      const double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      const double w = 0.5 + 0.5 * std::cos(std::numbers::pi * (t - i) / half_width);
      acc += samples[static_cast<std::size_t>(i)] * cutoff * sinc * w;
    }
    out[j] = static_cast<float>(acc);
  }
  return out;
}

}  // namespace envadv
