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

#include "envadv/nets.hpp"

namespace envadv {

std::string_view to_string(Arch arch) { return arch == Arch::vggm40 ? "vggm40" : "thin-resnet34"; }

std::string_view to_string(PoolKind pool) { return pool == PoolKind::tap ? "tap" : "sap"; }

std::string_view to_string(EnvNetOrder order) {
  return order == EnvNetOrder::bn_relu_fc ? "bn-relu-fc" : "relu-bn-fc";
}

Arch parse_arch(std::string_view text) {
  if (text == "vggm40" || text == "vgg-m-40") return Arch::vggm40;
  if (text == "thin-resnet34" || text == "thin_resnet34") return Arch::thin_resnet34;
  throw Error("unknown architecture '" + std::string(text) + "' (expected vggm40 or thin-resnet34)");
}

PoolKind parse_pool(std::string_view text) {
  if (text == "tap") return PoolKind::tap;
  if (text == "sap") return PoolKind::sap;
  throw Error("unknown pooling '" + std::string(text) + "' (expected tap or sap)");
}

EnvNetOrder parse_env_order(std::string_view text) {
  if (text == "bn-relu-fc") return EnvNetOrder::bn_relu_fc;
  if (text == "relu-bn-fc") return EnvNetOrder::relu_bn_fc;
  throw Error("unknown env_net order '" + std::string(text) + "'");
}

template class SpeakerNet<float>;
template class SpeakerNet<double>;

}  // namespace envadv
