// nsmir/report.hpp
//
// Copyright 2026 NSMIR Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "nsmir/common.hpp"
#include "nsmir/tasks.hpp"

namespace nsmir::report {

struct GridCell {
  int round = 1;       // 1..3
  int tier = 1;        // 1..3 (U1..U3)
  double val_metric = 0.0;
  double test_metric = 0.0;
};

struct RoundReport {
  Task task = Task::Downbeat;
  double teacher_val = 0.0;
  double teacher_test = 0.0;
  std::vector<GridCell> cells;  // round-major, 9 cells for a full grid
};

inline void write_report_csv(const RoundReport& r, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write report: " + path);
  f << "task,round,tier,val_metric,test_metric\n";
  f << task_name(r.task) << ",0,labeled," << fmt_g(r.teacher_val) << "," << fmt_g(r.teacher_test) << "\n";
  for (const auto& c : r.cells) {
    f << task_name(r.task) << "," << c.round << ",u" << c.tier << "," << fmt_g(c.val_metric) << ","
      << fmt_g(c.test_metric) << "\n";
  }
}

inline RoundReport read_report_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read report: " + path);
  RoundReport r;
  std::string line;
  std::getline(f, line);
  bool first = true;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    char task_buf[32], tier_buf[16];
    int round = 0;
    double val = 0.0, test = 0.0;
    if (std::sscanf(line.c_str(), "%31[^,],%d,%15[^,],%lf,%lf", task_buf, &round, tier_buf, &val, &test) != 5)
      throw IoError("bad report line: " + line);
    if (first) {
      r.task = task_from_name(task_buf);
      first = false;
    }
    if (round == 0) {
      r.teacher_val = val;
      r.teacher_test = test;
    } else {
      GridCell c;
      c.round = round;
      c.tier = tier_buf[1] - '0';
      c.val_metric = val;
      c.test_metric = test;
      r.cells.push_back(c);
    }
  }
  return r;
}

// Dependency-free line plot: test metric vs unlabeled tier, one polyline per
// round, dashed horizontal teacher baseline.
inline void write_report_svg(const RoundReport& r, const std::string& path) {
  const int W = 640, H = 420, ml = 70, mr = 30, mt = 40, mb = 60;
  double lo = r.teacher_test, hi = r.teacher_test;
  for (const auto& c : r.cells) {
    lo = std::min(lo, c.test_metric);
    hi = std::max(hi, c.test_metric);
  }
  lo = std::max(0.0, lo - 0.05);
  hi = std::min(1.0, hi + 0.05);
  if (hi - lo < 1e-9) hi = lo + 0.1;

  auto xpos = [&](int tier) { return ml + (tier - 1) * (W - ml - mr) / 2.0; };
  auto ypos = [&](double v) { return H - mb - (v - lo) / (hi - lo) * (H - mt - mb); };

  std::ofstream f(path);
  if (!f) throw IoError("cannot write svg: " + path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
    << task_name(r.task) << ": test metric vs unlabeled tier</text>\n";
  // axes
  f << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\"" << H - mb
    << "\" stroke=\"black\"/>\n";
  f << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
    << "\" stroke=\"black\"/>\n";
  for (int tier = 1; tier <= 3; ++tier) {
    f << "<text x=\"" << xpos(tier) << "\" y=\"" << H - mb + 20 << "\" text-anchor=\"middle\" font-size=\"12\">U"
      << tier << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    f << "<text x=\"" << ml - 8 << "\" y=\"" << ypos(v) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
      << fmt_g(double(int(v * 1000)) / 1000.0) << "</text>\n";
  }
  // teacher baseline
  f << "<line x1=\"" << ml << "\" y1=\"" << ypos(r.teacher_test) << "\" x2=\"" << W - mr << "\" y2=\""
    << ypos(r.teacher_test) << "\" stroke=\"#d4a017\" stroke-dasharray=\"8,5\" stroke-width=\"2\"/>\n";
  f << "<text x=\"" << W - mr << "\" y=\"" << ypos(r.teacher_test) - 6
    << "\" text-anchor=\"end\" font-size=\"11\" fill=\"#d4a017\">teacher</text>\n";

  const char* colors[3] = {"#1f77b4", "#2ca02c", "#d62728"};
  for (int round = 1; round <= 3; ++round) {
    std::string points;
    for (const auto& c : r.cells) {
      if (c.round != round) continue;
      points += fmt_g(xpos(c.tier)) + "," + fmt_g(ypos(c.test_metric)) + " ";
      f << "<circle cx=\"" << xpos(c.tier) << "\" cy=\"" << ypos(c.test_metric) << "\" r=\"3.5\" fill=\""
        << colors[round - 1] << "\"/>\n";
    }
    if (!points.empty()) {
      f << "<polyline points=\"" << points << "\" fill=\"none\" stroke=\"" << colors[round - 1]
        << "\" stroke-width=\"2\"/>\n";
      f << "<text x=\"" << ml + 8 << "\" y=\"" << mt + 16 * round << "\" font-size=\"12\" fill=\""
        << colors[round - 1] << "\">round " << round << "</text>\n";
    }
  }
  f << "</svg>\n";
}

}  // namespace nsmir::report
