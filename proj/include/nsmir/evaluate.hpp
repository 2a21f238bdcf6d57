// nsmir/evaluate.hpp
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

#include <filesystem>
#include <string>
#include <vector>

#include "nsmir/audio.hpp"
#include "nsmir/labels.hpp"
#include "nsmir/manifest.hpp"
#include "nsmir/metrics.hpp"
#include "nsmir/model.hpp"
#include "nsmir/postproc.hpp"

namespace nsmir::evaluate {

inline constexpr int kChordMedianWindow = 9;
inline constexpr int kKeyMedianWindow = 3;

// Long clips are predicted in fixed windows and concatenated; keeps the
// temporal attention footprint bounded and matches the training geometry.
inline FrameLabelSequence predict_windowed(model::Model& m, const AudioClip& clip,
                                           double window_s = 12.0) {
  const TaskSpec spec = task_spec(m.config.task);
  const int64_t grid = int64_t(spec.spectro_hop_samples) * spec.pool_t;
  const int64_t win_samples = (int64_t(std::llround(window_s * clip.sample_rate_hz)) / grid) * grid;

  if (m.config.task == Task::Key || m.config.task == Task::Structure ||
      int64_t(clip.samples.size()) <= win_samples) {
    return model::predict(m, clip);  // whole clip
  }

  FrameLabelSequence out;
  out.spec = spec;
  out.kind = LabelKind::Soft;
  out.frames = 0;
  int64_t start = 0;
  while (start < int64_t(clip.samples.size())) {
    const int64_t end = std::min<int64_t>(start + win_samples, int64_t(clip.samples.size()));
    if (end - start < grid) break;
    AudioClip piece;
    piece.sample_rate_hz = clip.sample_rate_hz;
    piece.id = clip.id;
    piece.samples.assign(clip.samples.begin() + start, clip.samples.begin() + end);
    auto part = model::predict(m, piece);
    out.frames += part.frames;
    out.probs.insert(out.probs.end(), part.probs.begin(), part.probs.end());
    out.boundary.insert(out.boundary.end(), part.boundary.begin(), part.boundary.end());
    start = end;
  }
  return out;
}

inline std::vector<double> reference_downbeats(const EventAnnotation& ann) {
  std::vector<double> out;
  for (const auto& e : ann.events) {
    if (e.label == "downbeat") out.push_back(e.onset_s);
  }
  return out;
}

// Internal section boundaries (onsets of all sections after the first).
inline std::vector<double> reference_boundaries(const EventAnnotation& ann) {
  std::vector<double> out;
  for (size_t i = 1; i < ann.events.size(); ++i) out.push_back(ann.events[i].onset_s);
  return out;
}

inline std::string clip_key_estimate(const FrameLabelSequence& fls) {
  // mean probability over frames, argmax over the 24 real keys
  std::vector<double> mean(24, 0.0);
  for (int t = 0; t < fls.frames; ++t) {
    for (int c = 0; c < 24; ++c) mean[size_t(c)] += fls.at(t, c);
  }
  int best = 0;
  for (int c = 1; c < 24; ++c) {
    if (mean[size_t(c)] > mean[size_t(best)]) best = c;
  }
  return chord_class_name(best);
}

// Task metric for one clip against its reference annotation.
inline double evaluate_clip(model::Model& m, const AudioClip& clip, const EventAnnotation& ref) {
  auto fls = predict_windowed(m, clip);
  switch (m.config.task) {
    case Task::Downbeat: {
      const auto beats = postproc::decode_downbeats(fls);
      return metrics::beat_f_measure(reference_downbeats(ref), postproc::downbeat_times(beats));
    }
    case Task::Chord: {
      const auto est = postproc::smooth_and_merge(fls, kChordMedianWindow);
      if (est.events.empty()) return 0.0;
      return metrics::chord_weighted_accuracy(ref, est);
    }
    case Task::Key: {
      if (ref.events.empty()) return 0.0;
      return metrics::key_weighted_score(ref.events.front().label, clip_key_estimate(fls));
    }
    case Task::Structure: {
      const auto bounds = postproc::pick_boundaries(fls.boundary, fls.spec.frame_hop_s);
      return metrics::boundary_hr_f(reference_boundaries(ref), bounds);
    }
  }
  return 0.0;
}

inline metrics::EvalResult evaluate_entries(model::Model& m, const CorpusManifest& manifest,
                                            const std::vector<ManifestEntry>& entries) {
  namespace fs = std::filesystem;
  std::vector<std::pair<std::string, double>> per_clip;
  std::vector<double> durations;
  for (const auto& e : entries) {
    if (!e.label_path) throw ParamError("evaluation needs labeled entries: " + e.clip_path);
    AudioClip clip = read_wav((fs::path(manifest.root) / e.clip_path).string());
    clip.id = e.clip_id();
    const auto ref = read_annotation((fs::path(manifest.root) / *e.label_path).string());
    per_clip.emplace_back(clip.id, evaluate_clip(m, clip, ref));
    durations.push_back(clip.duration_s());
  }
  return metrics::EvalResult::aggregate(m.config.task, per_clip, durations);
}

inline metrics::EvalResult evaluate_split(model::Model& m, const CorpusManifest& manifest, Split split) {
  return evaluate_entries(m, manifest, manifest.labeled(split));
}

}  // namespace nsmir::evaluate
