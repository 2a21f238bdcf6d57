// nsmir/labels.hpp
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
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nsmir/common.hpp"
#include "nsmir/tasks.hpp"

namespace nsmir {

// ----------------------------------------------------------------------------
// Event-level ground truth. Point events (beats, boundaries) have no offset.

struct Event {
  double onset_s = 0.0;
  std::optional<double> offset_s;
  std::string label;
};

struct EventAnnotation {
  Task task = Task::Downbeat;
  std::vector<Event> events;

  void validate() const {
    double prev = -1.0;
    for (const auto& e : events) {
      if (e.onset_s < prev) throw ParamError("annotation onsets must be non-decreasing");
      if (e.offset_s && *e.offset_s <= e.onset_s) throw ParamError("event offset must exceed onset");
      class_index(task, e.label);  // throws VocabError on unknown labels
      prev = e.onset_s;
    }
  }
};

inline nlohmann::json annotation_to_json(const EventAnnotation& ann) {
  nlohmann::json j;
  j["task"] = task_name(ann.task);
  j["events"] = nlohmann::json::array();
  for (const auto& e : ann.events) {
    nlohmann::json je;
    je["onset"] = e.onset_s;
    if (e.offset_s) je["offset"] = *e.offset_s;
    je["label"] = e.label;
    j["events"].push_back(je);
  }
  return j;
}

inline EventAnnotation annotation_from_json(const nlohmann::json& j) {
  EventAnnotation ann;
  ann.task = task_from_name(j.at("task").get<std::string>());
  for (const auto& je : j.at("events")) {
    Event e;
    e.onset_s = je.at("onset").get<double>();
    if (je.contains("offset")) e.offset_s = je.at("offset").get<double>();
    e.label = je.at("label").get<std::string>();
    ann.events.push_back(e);
  }
  ann.validate();
  return ann;
}

inline void write_annotation(const std::string& path, const EventAnnotation& ann) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  f << annotation_to_json(ann).dump(2) << "\n";
  if (!f) throw IoError("write failed: " + path);
}

inline EventAnnotation read_annotation(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  nlohmann::json j;
  f >> j;
  return annotation_from_json(j);
}

// ----------------------------------------------------------------------------
// Per-frame class distributions at the task frame rate. Ground truth is Hard
// (one-hot); pseudo-labels keep the full Soft distribution.

enum class LabelKind { Hard, Soft };

struct FrameLabelSequence {
  TaskSpec spec;
  LabelKind kind = LabelKind::Hard;
  int frames = 0;
  std::vector<float> probs;      // frames * num_classes, row-major
  std::vector<float> boundary;   // frames, structure only; values in [0, 1]

  float& at(int t, int c) { return probs[size_t(t) * spec.num_classes + c]; }
  float at(int t, int c) const { return probs[size_t(t) * spec.num_classes + c]; }

  int argmax_at(int t) const {
    int best = 0;
    float best_v = at(t, 0);
    for (int c = 1; c < spec.num_classes; ++c) {
      if (at(t, c) > best_v) {
        best_v = at(t, c);
        best = c;
      }
    }
    return best;
  }

  void validate() const {
    if (int(probs.size()) != frames * spec.num_classes) throw ShapeError("label matrix size mismatch");
    for (int t = 0; t < frames; ++t) {
      float sum = 0.0f;
      for (int c = 0; c < spec.num_classes; ++c) {
        const float v = at(t, c);
        if (!std::isfinite(v) || v < 0.0f) throw NumericError("label probabilities must be finite and >= 0");
        sum += v;
      }
      if (std::abs(sum - 1.0f) > 1e-5f) throw NumericError("label row must sum to 1");
      if (kind == LabelKind::Hard) {
        int ones = 0;
        for (int c = 0; c < spec.num_classes; ++c) {
          if (at(t, c) == 1.0f) ++ones;
        }
        if (ones != 1) throw NumericError("hard label row must be one-hot");
      }
    }
    if (spec.has_boundary_channel && int(boundary.size()) != frames) {
      throw ShapeError("structure labels need a boundary channel");
    }
  }
};

// Frame index containing time t; tolerant of representation error in hop_s.
inline int frame_of_time(double t_s, double hop_s) {
  return int(std::floor(t_s / hop_s + 1e-6));
}

// Rasterizes events onto the frame grid: T = floor(len / hop); interval
// events own the frames whose start time falls inside them, point events own
// the single frame containing the onset, everything else is the outside
// class. Structure also gets boundary = 1 on each event-onset frame.
inline FrameLabelSequence encode_labels(const EventAnnotation& ann, const TaskSpec& spec, double clip_len_s) {
  if (ann.task != spec.task) throw ParamError("annotation/spec task mismatch");
  ann.validate();

  FrameLabelSequence fls;
  fls.spec = spec;
  fls.kind = LabelKind::Hard;
  fls.frames = int(std::floor(clip_len_s / spec.frame_hop_s + 1e-6));
  fls.probs.assign(size_t(fls.frames) * spec.num_classes, 0.0f);

  std::vector<int> cls(size_t(fls.frames), outside_class(spec.task));
  for (const auto& e : ann.events) {
    const int c = class_index(spec.task, e.label);
    if (e.offset_s) {
      const int first = std::max(0, frame_of_time(e.onset_s, spec.frame_hop_s));
      for (int t = first; t < fls.frames; ++t) {
        const double start = double(t) * spec.frame_hop_s;
        if (start >= *e.offset_s - 1e-9) break;
        if (start >= e.onset_s - 1e-9) cls[size_t(t)] = c;
      }
    } else {
      const int t = frame_of_time(e.onset_s, spec.frame_hop_s);
      if (t >= 0 && t < fls.frames) cls[size_t(t)] = c;
    }
  }
  for (int t = 0; t < fls.frames; ++t) fls.at(t, cls[size_t(t)]) = 1.0f;

  if (spec.has_boundary_channel) {
    fls.boundary.assign(size_t(fls.frames), 0.0f);
    for (const auto& e : ann.events) {
      const int t = frame_of_time(e.onset_s, spec.frame_hop_s);
      if (t >= 0 && t < fls.frames) fls.boundary[size_t(t)] = 1.0f;
    }
  }
  return fls;
}

// Inverse codec: merges maximal runs of equal per-frame argmax into events.
// Outside-class runs produce no event.
inline EventAnnotation decode_labels(const FrameLabelSequence& fls) {
  EventAnnotation ann;
  ann.task = fls.spec.task;
  const int outside = outside_class(fls.spec.task);
  int t = 0;
  while (t < fls.frames) {
    const int c = fls.argmax_at(t);
    int end = t + 1;
    while (end < fls.frames && fls.argmax_at(end) == c) ++end;
    if (c != outside) {
      Event e;
      e.onset_s = double(t) * fls.spec.frame_hop_s;
      e.offset_s = double(end) * fls.spec.frame_hop_s;
      e.label = class_label(fls.spec.task, c);
      ann.events.push_back(e);
    }
    t = end;
  }
  return ann;
}

}  // namespace nsmir
