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

#include "envadv/common.hpp"

#include <atomic>
#include <cstdio>
#include <iostream>
#include <mutex>

namespace envadv {
namespace {
std::atomic<std::size_t> g_warnings{0};
std::mutex g_warn_mutex;
}  // namespace

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

void warn(const std::string& message) {
  ++g_warnings;
  std::lock_guard lock(g_warn_mutex);
  std::cerr << "WARNING: " << message << '\n';
}

std::size_t warning_count() { return g_warnings.load(); }

}  // namespace envadv
