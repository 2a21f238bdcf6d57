// nsmir/postproc.hpp
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
#include <limits>
#include <vector>

#include "nsmir/common.hpp"
#include "nsmir/labels.hpp"
#include "nsmir/tasks.hpp"

namespace nsmir::postproc {

// ----------------------------------------------------------------------------
// Bar-pointer HMM for beat/downbeat decoding. A state is (meter, tempo in
// frames per beat, beat index in bar, frame index in beat); the pointer
// advances one frame per step, and tempo may move to an adjacent value with
// total probability 0.02 at each beat transition.

struct BarPointerConfig {
  double min_bpm = 55.0;
  double max_bpm = 215.0;
  double frame_period_s = 0.05;
  std::vector<int> meters = {3, 4};
  double tempo_change_prob = 0.02;
};

struct HmmState {
  int meter;
  int tempo;          // frames per beat
  int beat_in_bar;
  int frame_in_beat;
};

struct BarPointerHmm {
  BarPointerConfig cfg;
  std::vector<HmmState> states;
  int tempo_lo = 0;
  int tempo_hi = 0;

  explicit BarPointerHmm(const BarPointerConfig& config) : cfg(config) {
    tempo_lo = int(std::ceil(60.0 / (cfg.max_bpm * cfg.frame_period_s)));
    tempo_hi = int(std::floor(60.0 / (cfg.min_bpm * cfg.frame_period_s)));
    if (tempo_lo > tempo_hi) throw ParamError("empty tempo range");
    for (int meter : cfg.meters) {
      for (int tempo = tempo_lo; tempo <= tempo_hi; ++tempo) {
        for (int b = 0; b < meter; ++b) {
          for (int f = 0; f < tempo; ++f) states.push_back({meter, tempo, b, f});
        }
      }
    }
  }

  int state_index(int meter, int tempo, int b, int f) const {
    int idx = 0;
    for (int m : cfg.meters) {
      for (int t = tempo_lo; t <= tempo_hi; ++t) {
        if (m == meter && t == tempo) return idx + b * tempo + f;
        idx += m * t;
      }
    }
    throw ParamError("state out of range");
  }

  // Out-probability of a tempo move t_from -> t_to at a beat boundary.
  double tempo_transition(int t_from, int t_to) const {
    int neighbors = 0;
    if (t_from - 1 >= tempo_lo) ++neighbors;
    if (t_from + 1 <= tempo_hi) ++neighbors;
    const double change_each = cfg.tempo_change_prob / 2.0;
    if (t_to == t_from) return 1.0 - change_each * neighbors;
    if (std::abs(t_to - t_from) == 1 && t_to >= tempo_lo && t_to <= tempo_hi) return change_each;
    return 0.0;
  }

  // log-emission for a state given (beat, downbeat, non-beat) probabilities
  double log_emission(const HmmState& s, float p_beat, float p_down, float p_non) const {
    const double floor_p = 1e-10;
    double p;
    if (s.frame_in_beat == 0 && s.beat_in_bar == 0) p = p_down;
    else if (s.frame_in_beat == 0) p = p_beat;
    else p = p_non;
    return std::log(std::max(double(p), floor_p));
  }

  // Viterbi over a [T x 3] activation matrix (class layout: beat, downbeat,
  // non-beat). Returns the state index path. Ties resolve to the smallest
  // predecessor/state index (strict > updates only).
  std::vector<int> viterbi(const std::vector<float>& acts, int frames) const {
    const int N = int(states.size());
    std::vector<double> score(size_t(N));
    std::vector<double> next(size_t(N));
    std::vector<int> back(size_t(N) * frames);
    const double log_init = -std::log(double(N));
    for (int s = 0; s < N; ++s) {
      score[size_t(s)] = log_init + log_emission(states[size_t(s)], acts[0], acts[1], acts[2]);
    }
    for (int t = 1; t < frames; ++t) {
      const float pb = acts[size_t(t) * 3 + 0];
      const float pd = acts[size_t(t) * 3 + 1];
      const float pn = acts[size_t(t) * 3 + 2];
      for (int s = 0; s < N; ++s) {
        const HmmState& st = states[size_t(s)];
        double best = -std::numeric_limits<double>::infinity();
        int best_prev = -1;
        if (st.frame_in_beat > 0) {
          const int p = state_index(st.meter, st.tempo, st.beat_in_bar, st.frame_in_beat - 1);
          best = score[size_t(p)];  // deterministic advance, log prob 0
          best_prev = p;
        } else {
          const int prev_beat = (st.beat_in_bar + st.meter - 1) % st.meter;
          for (int tp = st.tempo - 1; tp <= st.tempo + 1; ++tp) {
            if (tp < tempo_lo || tp > tempo_hi) continue;
            const double trans = tempo_transition(tp, st.tempo);
            if (trans <= 0.0) continue;
            const int p = state_index(st.meter, tp, prev_beat, tp - 1);
            const double cand = score[size_t(p)] + std::log(trans);
            if (cand > best) {
              best = cand;
              best_prev = p;
            }
          }
        }
        next[size_t(s)] = best + log_emission(st, pb, pd, pn);
        back[size_t(t) * N + s] = best_prev;
      }
      std::swap(score, next);
    }
    int final_state = 0;
    double final_best = score[0];
    for (int s = 1; s < N; ++s) {
      if (score[size_t(s)] > final_best) {
        final_best = score[size_t(s)];
        final_state = s;
      }
    }
    std::vector<int> path(size_t(frames));
    path[size_t(frames - 1)] = final_state;
    for (int t = frames - 1; t > 0; --t) {
      path[size_t(t - 1)] = back[size_t(t) * N + path[size_t(t)]];
    }
    return path;
  }
};

// Fractional-overlap averaging of frame distributions onto a coarser grid.
// Used to honor a decoder frame period that differs from the model's.
inline std::vector<float> resample_activations(const FrameLabelSequence& fls, double target_hop_s,
                                               int& out_frames) {
  const double src_hop = fls.spec.frame_hop_s;
  const int C = fls.spec.num_classes;
  out_frames = int(std::floor(double(fls.frames) * src_hop / target_hop_s + 1e-9));
  std::vector<float> out(size_t(out_frames) * C, 0.0f);
  for (int j = 0; j < out_frames; ++j) {
    const double t0 = j * target_hop_s;
    const double t1 = (j + 1) * target_hop_s;
    double total_w = 0.0;
    const int i0 = std::max(0, int(std::floor(t0 / src_hop + 1e-9)));
    const int i1 = std::min(fls.frames, int(std::ceil(t1 / src_hop - 1e-9)));
    for (int i = i0; i < i1; ++i) {
      const double s0 = i * src_hop;
      const double s1 = (i + 1) * src_hop;
      const double w = std::max(0.0, std::min(t1, s1) - std::max(t0, s0));
      if (w <= 0.0) continue;
      total_w += w;
      for (int c = 0; c < C; ++c) out[size_t(j) * C + c] += float(w * fls.at(i, c));
    }
    if (total_w > 0.0) {
      for (int c = 0; c < C; ++c) out[size_t(j) * C + c] = float(out[size_t(j) * C + c] / total_w);
    }
  }
  return out;
}

struct DecodedBeat {
  double time_s;
  bool is_downbeat;
};

// Decode beat/downbeat times from 3-class activations. Activations are
// averaged onto the decoder's 50 ms grid first. Beats come from the Viterbi
// path's beat frames; frames where the non-beat probability dominates
// (> 0.5) are dropped, so silence decodes to an empty list.
inline std::vector<DecodedBeat> decode_downbeats(const FrameLabelSequence& act,
                                                 const BarPointerConfig& cfg = {}) {
  if (act.spec.task != Task::Downbeat) throw ParamError("decode_downbeats wants downbeat activations");
  int frames = 0;
  const auto res = resample_activations(act, cfg.frame_period_s, frames);
  if (frames < 2) return {};

  BarPointerHmm hmm(cfg);
  const auto path = hmm.viterbi(res, frames);
  std::vector<DecodedBeat> beats;
  for (int t = 0; t < frames; ++t) {
    const HmmState& s = hmm.states[size_t(path[size_t(t)])];
    if (s.frame_in_beat != 0) continue;
    if (res[size_t(t) * 3 + 2] > 0.5f) continue;
    beats.push_back({t * cfg.frame_period_s, s.beat_in_bar == 0});
  }
  return beats;
}

inline std::vector<double> downbeat_times(const std::vector<DecodedBeat>& beats) {
  std::vector<double> out;
  for (const auto& b : beats) {
    if (b.is_downbeat) out.push_back(b.time_s);
  }
  return out;
}

// ----------------------------------------------------------------------------
// Structure boundaries: thresholded local maxima with non-max suppression.

inline std::vector<double> pick_boundaries(const std::vector<float>& boundary_prob, double hop_s,
                                           double threshold = 0.5, double min_gap_s = 8.0) {
  const int n = int(boundary_prob.size());
  std::vector<int> candidates;
  for (int i = 0; i < n; ++i) {
    const float v = boundary_prob[size_t(i)];
    if (v <= threshold) continue;
    const float prev = i > 0 ? boundary_prob[size_t(i - 1)] : -1.0f;
    const float next = i + 1 < n ? boundary_prob[size_t(i + 1)] : -1.0f;
    if (v > prev && v >= next) candidates.push_back(i);
  }
  // strongest first; equal strength resolves to the earlier frame
  std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
    return boundary_prob[size_t(a)] > boundary_prob[size_t(b)];
  });
  std::vector<int> kept;
  for (int c : candidates) {
    bool blocked = false;
    for (int k : kept) {
      if (std::abs(c - k) * hop_s < min_gap_s) blocked = true;
    }
    if (!blocked) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end());
  std::vector<double> out;
  for (int k : kept) out.push_back(k * hop_s);
  return out;
}

// ----------------------------------------------------------------------------
// Chord/key event output: median-smoothed argmax runs.

inline std::vector<int> median_filter(const std::vector<int>& x, int window) {
  if (window % 2 == 0 || window <= 0) throw ParamError("median window must be odd");
  const int n = int(x.size());
  const int half = window / 2;
  std::vector<int> out(size_t(n));
  std::vector<int> buf(size_t(window));
  for (int i = 0; i < n; ++i) {
    for (int k = -half; k <= half; ++k) {
      const int j = std::clamp(i + k, 0, n - 1);  // edge replication
      buf[size_t(k + half)] = x[size_t(j)];
    }
    std::sort(buf.begin(), buf.end());
    out[size_t(i)] = buf[size_t(half)];
  }
  return out;
}

inline EventAnnotation smooth_and_merge(const FrameLabelSequence& fls, int median_window) {
  std::vector<int> cls(size_t(fls.frames));
  for (int t = 0; t < fls.frames; ++t) cls[size_t(t)] = fls.argmax_at(t);
  if (fls.frames > 0 && median_window > 1) cls = median_filter(cls, median_window);

  EventAnnotation ann;
  ann.task = fls.spec.task;
  const int outside = outside_class(fls.spec.task);
  int t = 0;
  while (t < fls.frames) {
    const int c = cls[size_t(t)];
    int end = t + 1;
    while (end < fls.frames && cls[size_t(end)] == c) ++end;
    if (c != outside) {
      Event e;
      e.onset_s = t * fls.spec.frame_hop_s;
      e.offset_s = end * fls.spec.frame_hop_s;
      e.label = class_label(fls.spec.task, c);
      ann.events.push_back(e);
    }
    t = end;
  }
  return ann;
}

}  // namespace nsmir::postproc
