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

#include "plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "envadv/common.hpp"

namespace envadv::plots {
namespace {

constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 150, kTop = 40, kBottom = 50;
constexpr const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); }
  double py(double y) const { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); }
};

std::string num(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3g", v);
  return b;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') {
      out += "&lt;";
    } else if (c == '>') {
      out += "&gt;";
    } else if (c == '&') {
      out += "&amp;";
    } else {
      out += c;
    }
  }
  return out;
}

void open_svg(std::ofstream& out, const std::filesystem::path& file, const std::string& title, const Frame& f,
              const std::string& x_label) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  out.open(file);
  if (!out) throw Error("cannot write plot '" + file.string() + "'");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
      << "</text>\n"
      << "<text x=\"" << (kLeft + kW - kRight) / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">"
      << escape(x_label) << "</text>\n";
  out << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kW - kLeft - kRight << "\" height=\""
      << kH - kTop - kBottom << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double x = f.x0 + (f.x1 - f.x0) * i / 4, y = f.y0 + (f.y1 - f.y0) * i / 4;
    out << "<text x=\"" << f.px(x) << "\" y=\"" << kH - kBottom + 15 << "\" text-anchor=\"middle\">" << num(x)
        << "</text>\n";
    out << "<text x=\"" << kLeft - 5 << "\" y=\"" << f.py(y) + 4 << "\" text-anchor=\"end\">" << num(y)
        << "</text>\n";
  }
}

void legend(std::ofstream& out, int i, const std::string& name) {
  const double y = kTop + 10 + 16 * i;
  out << "<rect x=\"" << kW - kRight + 10 << "\" y=\"" << y - 8 << "\" width=\"10\" height=\"10\" fill=\""
      << kColours[i % 6] << "\"/>\n<text x=\"" << kW - kRight + 25 << "\" y=\"" << y + 1 << "\">" << escape(name)
      << "</text>\n";
}

Frame pad(double x0, double x1, double y0, double y1) {
  if (!(x1 > x0)) x1 = x0 + 1;
  if (!(y1 > y0)) y1 = y0 + 1;
  return {x0, x1, y0, y1};
}

}  // namespace

void line_plot(const std::filesystem::path& file, const std::string& title, const std::string& x_label,
               const std::map<std::string, Series>& series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& [name, pts] : series) {
    for (const auto& [x, y] : pts) {
      if (!std::isfinite(y)) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) x0 = x1 = y0 = y1 = 0;
  const Frame f = pad(x0, x1, std::min(0.0, y0), y1);
  std::ofstream out;
  open_svg(out, file, title, f, x_label);
  int i = 0;
  for (const auto& [name, pts] : series) {
    out << "<polyline fill=\"none\" stroke=\"" << kColours[i % 6] << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : pts) {
      if (std::isfinite(y)) out << f.px(x) << ',' << f.py(y) << ' ';
    }
    out << "\"/>\n";
    legend(out, i++, name);
  }
  out << "</svg>\n";
}

void score_histogram(const std::filesystem::path& file, const std::string& title, const std::vector<double>& scores,
                     const std::vector<int>& labels, int bins) {
  if (scores.empty()) throw Error("score_histogram: no scores");
  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  const double lo = *lo_it, hi = *hi_it > *lo_it ? *hi_it : *lo_it + 1;
  std::vector<double> counts[2] = {std::vector<double>(bins), std::vector<double>(bins)};
  double totals[2] = {0, 0};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int b = std::min(bins - 1, static_cast<int>((scores[i] - lo) / (hi - lo) * bins));
    const int c = labels[i] == 1 ? 1 : 0;
    counts[c][static_cast<std::size_t>(b)] += 1;
    totals[c] += 1;
  }
  double peak = 0;
  for (int c = 0; c < 2; ++c) {
    for (double& v : counts[c]) {
      v = totals[c] > 0 ? v / totals[c] : 0;
      peak = std::max(peak, v);
    }
  }
  const Frame f = pad(lo, hi, 0, peak);
  std::ofstream out;
  open_svg(out, file, title, f, "score (distance)");
  const double width = (f.px(hi) - f.px(lo)) / bins;
  const char* names[2] = {"non-target", "target"};
  for (int c = 0; c < 2; ++c) {
    for (int b = 0; b < bins; ++b) {
      const double v = counts[c][static_cast<std::size_t>(b)];
      if (v <= 0) continue;
      out << "<rect x=\"" << f.px(lo + (hi - lo) * b / bins) << "\" y=\"" << f.py(v) << "\" width=\"" << width
          << "\" height=\"" << f.py(0) - f.py(v) << "\" fill=\"" << kColours[c] << "\" fill-opacity=\"0.5\"/>\n";
    }
    legend(out, c, names[c]);
  }
  out << "</svg>\n";
}

}  // namespace envadv::plots
