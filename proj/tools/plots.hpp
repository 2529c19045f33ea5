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

// Minimal static SVG charts for --emit-plots.

#ifndef ENVADV_TOOLS_PLOTS_HPP_
#define ENVADV_TOOLS_PLOTS_HPP_

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace envadv::plots {

using Series = std::vector<std::pair<double, double>>;

void line_plot(const std::filesystem::path& file, const std::string& title, const std::string& x_label,
               const std::map<std::string, Series>& series);

/// Overlaid histograms of target (label 1) and non-target scores.
void score_histogram(const std::filesystem::path& file, const std::string& title, const std::vector<double>& scores,
                     const std::vector<int>& labels, int bins = 40);

}  // namespace envadv::plots

#endif  // ENVADV_TOOLS_PLOTS_HPP_
