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

#include "envadv/checkpoint.hpp"

#include <json.hpp>

#include <fstream>

#include "envadv/config.hpp"

namespace envadv {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'E', 'N', 'V', 'A', 'D', 'V', 'C', 'K'};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const fs::path& file) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error("checkpoint '" + file.string() + "' is truncated");
  return v;
}

}  // namespace

void save_checkpoint(const fs::path& file, const Checkpoint& ckpt) {
  const json header = {{"trunk", json::parse(trunk_to_json(ckpt.trunk))},
                       {"dsp_hash", hex64(ckpt.dsp_hash)},
                       {"config_hash", hex64(ckpt.config_hash)},
                       {"epoch", ckpt.epoch},
                       {"best_metric", ckpt.best_metric},
                       {"best_epoch", ckpt.best_epoch},
                       {"epochs_since_improve", ckpt.epochs_since_improve},
                       {"speakers", ckpt.speakers},
                       {"extra", json::parse(ckpt.extra_json)}};
  const std::string text = header.dump();
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(kMagic, 8);
    put(out, kCheckpointVersion);
    put(out, static_cast<std::uint64_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put(out, static_cast<std::uint64_t>(ckpt.tensors.size()));
    for (const auto& [name, m] : ckpt.tensors) {
      put(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put(out, static_cast<std::int64_t>(m.rows()));
      put(out, static_cast<std::int64_t>(m.cols()));
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(float) * m.size()));
    }
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw Error("failed writing checkpoint '" + file.string() + "' (disk full?)");
    }
  }
  fs::rename(tmp, file);
}

Checkpoint load_checkpoint(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + file.string() + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != std::string(kMagic, 8)) {
    throw Error("'" + file.string() + "' is not an envadv checkpoint");
  }
  Checkpoint ckpt;
  ckpt.format_version = get<std::uint32_t>(in, file);
  if (ckpt.format_version != kCheckpointVersion) {
    throw Error("checkpoint '" + file.string() + "' has format version " + std::to_string(ckpt.format_version) +
                ", expected " + std::to_string(kCheckpointVersion));
  }
  const auto header_len = get<std::uint64_t>(in, file);
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw Error("checkpoint '" + file.string() + "' is truncated");
  const json header = json::parse(text);
  ckpt.trunk = trunk_from_json(header.at("trunk").dump());
  ckpt.dsp_hash = std::stoull(header.at("dsp_hash").get<std::string>(), nullptr, 16);
  ckpt.config_hash = std::stoull(header.at("config_hash").get<std::string>(), nullptr, 16);
  ckpt.epoch = header.at("epoch").get<int>();
  ckpt.best_metric = header.at("best_metric").get<double>();
  ckpt.best_epoch = header.value("best_epoch", -1);
  ckpt.epochs_since_improve = header.value("epochs_since_improve", 0);
  ckpt.speakers = header.at("speakers").get<std::vector<std::string>>();
  ckpt.extra_json = header.value("extra", json::object()).dump();
  const auto count = get<std::uint64_t>(in, file);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, file);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = get<std::int64_t>(in, file);
    const auto cols = get<std::int64_t>(in, file);
    if (rows < 0 || cols < 0) throw Error("checkpoint '" + file.string() + "' has a corrupt tensor '" + name + "'");
    Eigen::MatrixXf m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(float) * rows * cols));
    if (!in) throw Error("checkpoint '" + file.string() + "' is truncated");
    ckpt.tensors.emplace(std::move(name), std::move(m));
  }
  return ckpt;
}

}  // namespace envadv
