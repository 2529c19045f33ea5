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

#ifndef ENVADV_CHECKPOINT_HPP_
#define ENVADV_CHECKPOINT_HPP_

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "envadv/nets.hpp"
#include "envadv/optim.hpp"

namespace envadv {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: magic "ENVADVCK", format version, a JSON header and
/// named float32 tensors (parameters, normalisation buffers, optimiser state).
struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  TrunkConfig trunk;
  std::uint64_t dsp_hash = 0;
  std::uint64_t config_hash = 0;
  /// Next epoch to run when resuming.
  int epoch = 0;
  double best_metric = 0.0;
  int best_epoch = -1;
  int epochs_since_improve = 0;
  std::vector<std::string> speakers;
  /// Free-form JSON object for anything else a caller wants to keep.
  std::string extra_json = "{}";
  std::map<std::string, Eigen::MatrixXf> tensors;
};

/// Written to a temporary file and renamed, so a failed write never leaves a
/// truncated checkpoint behind.
void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& file);

template <typename Scalar>
void export_tensors(Checkpoint& ckpt, const std::vector<nn::Parameter<Scalar>*>& params) {
  for (const auto* p : params) ckpt.tensors[p->name] = p->value.template cast<float>();
}

template <typename Scalar>
void export_tensors(Checkpoint& ckpt, const std::vector<nn::Buffer<Scalar>>& buffers) {
  for (const auto& b : buffers) ckpt.tensors[b.name] = b.value->template cast<float>();
}

namespace detail {
template <typename Scalar>
void import_one(const Checkpoint& ckpt, const std::string& name, nn::Mat<Scalar>& dst) {
  const auto it = ckpt.tensors.find(name);
  if (it == ckpt.tensors.end()) throw Error("checkpoint lacks tensor '" + name + "'");
  if (it->second.rows() != dst.rows() || it->second.cols() != dst.cols()) {
    throw Error("checkpoint tensor '" + name + "' is " + std::to_string(it->second.rows()) + "x" +
                std::to_string(it->second.cols()) + ", model expects " + std::to_string(dst.rows()) + "x" +
                std::to_string(dst.cols()));
  }
  dst = it->second.template cast<Scalar>();
}
}  // namespace detail

template <typename Scalar>
void import_tensors(const Checkpoint& ckpt, const std::vector<nn::Parameter<Scalar>*>& params) {
  for (auto* p : params) detail::import_one(ckpt, p->name, p->value);
}

template <typename Scalar>
void import_tensors(const Checkpoint& ckpt, const std::vector<nn::Buffer<Scalar>>& buffers) {
  for (const auto& b : buffers) detail::import_one(ckpt, b.name, *b.value);
}

/// Parameters and buffers of every module, including the verification head.
template <typename Scalar>
void export_model(Checkpoint& ckpt, SpeakerNet<Scalar>& net) {
  ckpt.trunk = net.config();
  export_tensors(ckpt, net.all_parameters());
  export_tensors(ckpt, net.all_buffers());
}

/// Builds a model from the checkpoint's TrunkConfig and loads every tensor.
template <typename Scalar>
SpeakerNet<Scalar> import_model(const Checkpoint& ckpt) {
  SpeakerNet<Scalar> net(ckpt.trunk);
  if (ckpt.tensors.count("verif_head.weight")) net.add_verif_head();
  import_tensors(ckpt, net.all_parameters());
  import_tensors(ckpt, net.all_buffers());
  return net;
}

/// FNV-1a over the raw bytes of every parameter value, in order.
template <typename Scalar>
std::uint64_t parameter_checksum(const std::vector<nn::Parameter<Scalar>*>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    const std::size_t n = sizeof(Scalar) * static_cast<std::size_t>(p->value.size());
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace envadv

#endif  // ENVADV_CHECKPOINT_HPP_
