// nsmir/tasks.hpp
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

#include <array>
#include <string>
#include <vector>

#include "nsmir/common.hpp"

namespace nsmir {

enum class Task { Downbeat, Chord, Key, Structure };

inline const char* task_name(Task t) {
  switch (t) {
    case Task::Downbeat: return "downbeat";
    case Task::Chord: return "chord";
    case Task::Key: return "key";
    case Task::Structure: return "structure";
  }
  return "?";
}

inline Task task_from_name(const std::string& s) {
  if (s == "downbeat") return Task::Downbeat;
  if (s == "chord") return Task::Chord;
  if (s == "key") return Task::Key;
  if (s == "structure") return Task::Structure;
  throw ParamError("unknown task: " + s);
}

// ----------------------------------------------------------------------------
// Class vocabularies.

inline const std::array<std::string, 12>& pitch_names() {
  static const std::array<std::string, 12> names = {"C",  "C#", "D",  "D#", "E",  "F",
                                                    "F#", "G",  "G#", "A",  "A#", "B"};
  return names;
}

// Chord/Key layout: 0..11 major roots, 12..23 minor roots, 24 "none".
inline constexpr int kNoneClass = 24;

inline std::string chord_class_name(int cls) {
  if (cls == kNoneClass) return "none";
  if (cls < 0 || cls > 24) throw VocabError("chord class out of range");
  const int root = cls % 12;
  return pitch_names()[size_t(root)] + (cls < 12 ? ":maj" : ":min");
}

inline int chord_class_index(const std::string& label) {
  if (label == "none") return kNoneClass;
  const auto colon = label.find(':');
  if (colon == std::string::npos) throw VocabError("bad chord/key label: " + label);
  const std::string root = label.substr(0, colon);
  const std::string quality = label.substr(colon + 1);
  int root_idx = -1;
  for (int i = 0; i < 12; ++i) {
    if (pitch_names()[size_t(i)] == root) root_idx = i;
  }
  if (root_idx < 0) throw VocabError("bad root in label: " + label);
  if (quality == "maj") return root_idx;
  if (quality == "min") return root_idx + 12;
  throw VocabError("bad quality in label: " + label);
}

// Downbeat layout: 0 beat, 1 downbeat, 2 non-beat.
inline constexpr int kBeatClass = 0;
inline constexpr int kDownbeatClass = 1;
inline constexpr int kNonBeatClass = 2;

inline const std::array<std::string, 3>& downbeat_class_names() {
  static const std::array<std::string, 3> names = {"beat", "downbeat", "nonbeat"};
  return names;
}

// Structure layout: 7 function classes; "silence" doubles as the outside class.
inline const std::array<std::string, 7>& structure_class_names() {
  static const std::array<std::string, 7> names = {"intro", "verse",  "chorus", "bridge",
                                                   "solo",  "outro",  "silence"};
  return names;
}
inline constexpr int kStructureOutsideClass = 6;

inline int class_index(Task task, const std::string& label) {
  switch (task) {
    case Task::Chord:
    case Task::Key:
      return chord_class_index(label);
    case Task::Downbeat: {
      const auto& names = downbeat_class_names();
      for (int i = 0; i < int(names.size()); ++i) {
        if (names[size_t(i)] == label) return i;
      }
      throw VocabError("bad downbeat label: " + label);
    }
    case Task::Structure: {
      const auto& names = structure_class_names();
      for (int i = 0; i < int(names.size()); ++i) {
        if (names[size_t(i)] == label) return i;
      }
      throw VocabError("bad structure label: " + label);
    }
  }
  throw VocabError("bad task");
}

inline std::string class_label(Task task, int cls) {
  switch (task) {
    case Task::Chord:
    case Task::Key:
      return chord_class_name(cls);
    case Task::Downbeat:
      if (cls < 0 || cls > 2) throw VocabError("downbeat class out of range");
      return downbeat_class_names()[size_t(cls)];
    case Task::Structure:
      if (cls < 0 || cls > 6) throw VocabError("structure class out of range");
      return structure_class_names()[size_t(cls)];
  }
  throw VocabError("bad task");
}

// Class for frames not covered by any event.
inline int outside_class(Task task) {
  switch (task) {
    case Task::Downbeat: return kNonBeatClass;
    case Task::Chord:
    case Task::Key: return kNoneClass;
    case Task::Structure: return kStructureOutsideClass;
  }
  throw VocabError("bad task");
}

// ----------------------------------------------------------------------------
// Per-task front-end geometry. Frame hop in seconds is tied to the
// spectrogram hop and the time-pooling factor: hop_s = hop / 16000 * pool_t.

struct TaskSpec {
  Task task = Task::Downbeat;
  int num_classes = 3;
  double frame_hop_s = 0.02;
  int spectro_hop_samples = 160;
  int pool_f = 2;
  int pool_t = 2;
  int residual_units = 1;
  bool has_boundary_channel = false;

  void validate() const {
    const double derived = double(spectro_hop_samples) / 16000.0 * pool_t;
    if (std::abs(derived - frame_hop_s) > 1e-9) throw ParamError("frame hop inconsistent with hop*pool_t");
  }
};

inline TaskSpec task_spec(Task t) {
  TaskSpec s;
  s.task = t;
  switch (t) {
    case Task::Downbeat:
      s.num_classes = 3;
      s.spectro_hop_samples = 160;
      s.pool_f = 2;
      s.pool_t = 2;
      s.residual_units = 1;
      break;
    case Task::Chord:
      s.num_classes = 25;
      s.spectro_hop_samples = 500;
      s.pool_f = 4;
      s.pool_t = 4;
      s.residual_units = 2;
      break;
    case Task::Key:
      s.num_classes = 25;
      s.spectro_hop_samples = 320;
      s.pool_f = 4;
      s.pool_t = 100;
      s.residual_units = 3;
      break;
    case Task::Structure:
      s.num_classes = 7;
      s.spectro_hop_samples = 512;
      s.pool_f = 4;
      s.pool_t = 6;
      s.residual_units = 1;
      s.has_boundary_channel = true;
      break;
  }
  s.frame_hop_s = double(s.spectro_hop_samples) / 16000.0 * s.pool_t;
  return s;
}

}  // namespace nsmir
