// nsmir/metrics.hpp
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

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "nsmir/common.hpp"
#include "nsmir/labels.hpp"
#include "nsmir/tasks.hpp"

namespace nsmir::metrics {

namespace detail {

inline void require_sorted(const std::vector<double>& v, const char* what) {
  for (size_t i = 1; i < v.size(); ++i) {
    if (v[i] < v[i - 1]) throw ParamError(std::string(what) + ": event times must be sorted");
  }
}

// Maximum one-to-one matching for uniform tolerance windows: walk both lists
// in time order, matching each estimate to the earliest unmatched reference
// inside the window. For equal-width windows this greedy is optimal.
inline int match_events(const std::vector<double>& ref, const std::vector<double>& est, double tol) {
  int matches = 0;
  size_t i = 0;
  for (double e : est) {
    while (i < ref.size() && ref[i] < e - tol) ++i;
    if (i < ref.size() && std::abs(ref[i] - e) <= tol) {
      ++matches;
      ++i;
    }
  }
  return matches;
}

inline double f_from_counts(int matches, size_t n_ref, size_t n_est) {
  if (n_ref == 0 && n_est == 0) return 1.0;
  if (n_ref == 0 || n_est == 0) return 0.0;
  const double p = double(matches) / double(n_est);
  const double r = double(matches) / double(n_ref);
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

}  // namespace detail

// ----------------------------------------------------------------------------
// Beat/downbeat F-measure at +-tol seconds.

inline double beat_f_measure(const std::vector<double>& ref, const std::vector<double>& est,
                             double tol_s = 0.07) {
  detail::require_sorted(ref, "beat_f_measure ref");
  detail::require_sorted(est, "beat_f_measure est");
  return detail::f_from_counts(detail::match_events(ref, est, tol_s), ref.size(), est.size());
}

// Boundary hit rate F at +-window seconds (HR.5F with the default).
inline double boundary_hr_f(const std::vector<double>& ref, const std::vector<double>& est,
                            double window_s = 0.5) {
  detail::require_sorted(ref, "boundary_hr_f ref");
  detail::require_sorted(est, "boundary_hr_f est");
  return detail::f_from_counts(detail::match_events(ref, est, window_s), ref.size(), est.size());
}

// ----------------------------------------------------------------------------
// Chord recognition: time-weighted accuracy over the reference timeline
// under the maj/min triad vocabulary. Invariant to re-segmentation.

namespace detail {

struct Segments {
  std::vector<double> bounds;       // n+1 edges
  std::vector<std::string> labels;  // n labels

  static Segments from_annotation(const EventAnnotation& ann) {
    Segments s;
    double prev_end = -std::numeric_limits<double>::infinity();
    for (const auto& e : ann.events) {
      if (!e.offset_s) throw ParamError("chord events need offsets");
      if (e.onset_s < prev_end - 1e-9) throw ParamError("overlapping events in one annotation");
      prev_end = *e.offset_s;
    }
    for (const auto& e : ann.events) {
      s.bounds.push_back(e.onset_s);
      s.bounds.push_back(*e.offset_s);
      s.labels.push_back(e.label);
    }
    return s;
  }

  std::string label_at(double t) const {
    for (size_t i = 0; i < labels.size(); ++i) {
      if (t >= bounds[i * 2] - 1e-12 && t < bounds[i * 2 + 1] - 1e-12) return labels[i];
    }
    return "none";
  }
};

}  // namespace detail

inline double chord_weighted_accuracy(const EventAnnotation& ref, const EventAnnotation& est) {
  const auto rs = detail::Segments::from_annotation(ref);
  const auto es = detail::Segments::from_annotation(est);
  if (rs.labels.empty()) throw ParamError("empty reference annotation");

  // elementary intervals from the union of boundaries, restricted to ref span
  std::vector<double> cuts;
  for (double b : rs.bounds) cuts.push_back(b);
  for (double b : es.bounds) cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }),
             cuts.end());

  double total = 0.0, correct = 0.0;
  for (size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double t0 = cuts[i], t1 = cuts[i + 1];
    const double mid = 0.5 * (t0 + t1);
    const std::string ref_label = rs.label_at(mid);
    bool in_ref = false;
    for (size_t k = 0; k < rs.labels.size(); ++k) {
      if (mid >= rs.bounds[k * 2] && mid < rs.bounds[k * 2 + 1]) in_ref = true;
    }
    if (!in_ref) continue;
    const double dur = t1 - t0;
    total += dur;
    if (chord_class_index(ref_label) == chord_class_index(es.label_at(mid))) correct += dur;
  }
  if (total <= 0.0) throw ParamError("reference annotation covers no time");
  return correct / total;
}

// ----------------------------------------------------------------------------
// Key detection: weighted accuracy with partial credit (exact 1.0, perfect
// fifth 0.5, relative 0.3, parallel 0.2).

inline double key_weighted_score(const std::string& ref_key, const std::string& est_key) {
  const int ref_cls = chord_class_index(ref_key);
  const int est_cls = chord_class_index(est_key);
  if (ref_cls == kNoneClass || est_cls == kNoneClass)
    throw ParamError("key score undefined for 'none'");
  const int ref_tonic = ref_cls % 12, est_tonic = est_cls % 12;
  const bool ref_minor = ref_cls >= 12, est_minor = est_cls >= 12;
  if (ref_cls == est_cls) return 1.0;
  if (ref_minor == est_minor && (est_tonic - ref_tonic + 12) % 12 == 7) return 0.5;
  if (!ref_minor && est_minor && est_tonic == (ref_tonic + 9) % 12) return 0.3;
  if (ref_minor && !est_minor && est_tonic == (ref_tonic + 3) % 12) return 0.3;
  if (ref_tonic == est_tonic && ref_minor != est_minor) return 0.2;
  return 0.0;
}

// ----------------------------------------------------------------------------
// Corpus-level aggregation.

struct EvalResult {
  Task task = Task::Downbeat;
  double score = 0.0;
  std::vector<std::pair<std::string, double>> per_clip;
  double support_s = 0.0;

  // mean over clips for downbeat/key/structure, duration-weighted for chord
  static EvalResult aggregate(Task task, const std::vector<std::pair<std::string, double>>& per_clip,
                              const std::vector<double>& durations_s) {
    if (per_clip.size() != durations_s.size()) throw ParamError("per-clip/duration size mismatch");
    EvalResult r;
    r.task = task;
    r.per_clip = per_clip;
    for (double d : durations_s) r.support_s += d;
    if (per_clip.empty()) return r;
    if (task == Task::Chord) {
      double acc = 0.0;
      for (size_t i = 0; i < per_clip.size(); ++i) acc += per_clip[i].second * durations_s[i];
      r.score = r.support_s > 0.0 ? acc / r.support_s : 0.0;
    } else {
      double acc = 0.0;
      for (const auto& [id, s] : per_clip) acc += s;
      r.score = acc / double(per_clip.size());
    }
    return r;
  }
};

}  // namespace nsmir::metrics
