// nsmir/synth.hpp
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
#include <string>
#include <vector>

#include "nsmir/audio.hpp"
#include "nsmir/common.hpp"
#include "nsmir/labels.hpp"
#include "nsmir/tasks.hpp"

namespace nsmir::synth {

// Generator knobs. Zero/empty fields are drawn from the task's default
// ranges, so fully random clips need only a seed.
struct SynthParams {
  double tempo_bpm = 0.0;                 // 0 -> uniform in [60, 180]
  int meter = 0;                          // 0 -> one of {3, 4}
  double length_s = 0.0;                  // 0 -> task default range
  std::string key;                        // Key task; empty -> random maj/min key
  std::vector<std::string> progression;   // Chord task; empty -> random triads
  int num_sections = 0;                   // Structure; 0 -> 2..6
  double background_gain = -1.0;          // Downbeat accompaniment; <0 -> drawn

  void validate(Task task) const {
    if (tempo_bpm != 0.0 && (tempo_bpm < 60.0 || tempo_bpm > 180.0))
      throw ParamError("tempo must be in [60, 180] BPM");
    if (meter != 0 && meter != 3 && meter != 4) throw ParamError("meter must be 3 or 4");
    if (num_sections != 0 && (num_sections < 2 || num_sections > 6))
      throw ParamError("sections must be in [2, 6]");
    if (!key.empty()) {
      const int cls = chord_class_index(key);
      if (cls == kNoneClass) throw ParamError("key may not be 'none'");
    }
    for (const auto& label : progression) {
      if (chord_class_index(label) == kNoneClass) throw ParamError("progression chords may not be 'none'");
    }
    if (task == Task::Downbeat || task == Task::Chord) {
      if (length_s != 0.0 && (length_s < 12.0 || length_s > 30.0))
        throw ParamError("downbeat/chord clips must be 12-30 s");
    } else {
      if (length_s != 0.0 && (length_s < 30.0 || length_s > 60.0))
        throw ParamError("key/structure clips must be 30-60 s");
    }
  }
};

namespace detail {

inline double pitch_hz(int pitch_class, int octave) {
  // C0 = 16.3516 Hz
  return 16.3515978312874 * std::pow(2.0, octave + pitch_class / 12.0);
}

// Triad intervals from the root: major {0,4,7}, minor {0,3,7}.
inline std::vector<int> triad_pitch_classes(int chord_class) {
  const int root = chord_class % 12;
  const bool minor = chord_class >= 12;
  return {root, (root + (minor ? 3 : 4)) % 12, (root + 7) % 12};
}

// Additive tone with a mild 1/h^2 harmonic rolloff, linear fade at the ends.
inline void add_tone(std::vector<float>& x, double f0, double t0, double t1, double amp,
                     int harmonics, double decay_per_s = 0.0) {
  const int64_t a = int64_t(std::lrint(t0 * kSampleRateHz));
  const int64_t b = std::min<int64_t>(int64_t(std::lrint(t1 * kSampleRateHz)), int64_t(x.size()));
  const int64_t fade = 160;  // 10 ms
  for (int h = 1; h <= harmonics; ++h) {
    const double f = f0 * h;
    if (f >= kSampleRateHz / 2.0 * 0.95) break;
    const double ha = amp / double(h * h);
    const double w = 2.0 * M_PI * f / kSampleRateHz;
    for (int64_t n = std::max<int64_t>(a, 0); n < b; ++n) {
      double env = 1.0;
      const int64_t rel = n - a;
      const int64_t until_end = b - 1 - n;
      if (rel < fade) env *= double(rel) / double(fade);
      if (until_end < fade) env *= double(until_end) / double(fade);
      if (decay_per_s > 0.0) env *= std::exp(-decay_per_s * double(rel) / kSampleRateHz);
      x[size_t(n)] += float(ha * env * std::sin(w * double(n)));
    }
  }
}

// Short decaying sine burst; the percussive element of downbeat clips.
inline void add_click(std::vector<float>& x, double t_s, double freq_hz, double amp) {
  const int64_t start = int64_t(std::lrint(t_s * kSampleRateHz));
  const int64_t len = 400;  // 25 ms
  const double w = 2.0 * M_PI * freq_hz / kSampleRateHz;
  for (int64_t k = 0; k < len; ++k) {
    const int64_t n = start + k;
    if (n < 0 || n >= int64_t(x.size())) continue;
    x[size_t(n)] += float(amp * std::exp(-double(k) / 60.0) * std::sin(w * double(k)));
  }
}

inline void add_noise(std::vector<float>& x, double sigma, RngStream& rng) {
  for (auto& v : x) v += float(sigma * rng.normal());
}

inline void add_triad(std::vector<float>& x, int chord_class, double t0, double t1, double amp,
                      int harmonics) {
  const auto pcs = triad_pitch_classes(chord_class);
  add_tone(x, pitch_hz(pcs[0], 3), t0, t1, amp, harmonics);
  add_tone(x, pitch_hz(pcs[1], 4), t0, t1, amp * 0.8, harmonics);
  add_tone(x, pitch_hz(pcs[2], 4), t0, t1, amp * 0.8, harmonics);
  add_tone(x, pitch_hz(pcs[0], 4), t0, t1, amp * 0.6, harmonics);
}

inline void normalize_peak(std::vector<float>& x, float target = 0.95f) {
  float peak = 0.0f;
  for (float v : x) peak = std::max(peak, std::abs(v));
  if (peak > target) {
    const float g = target / peak;
    for (auto& v : x) v *= g;
  }
}

// Diatonic triads available inside a key: 6 chords, no diminished.
inline std::vector<int> diatonic_triads(int key_class) {
  const int tonic = key_class % 12;
  const bool minor = key_class >= 12;
  std::vector<int> out;
  if (!minor) {
    const int degrees[6] = {0, 2, 4, 5, 7, 9};
    const bool is_min[6] = {false, true, true, false, false, true};
    for (int i = 0; i < 6; ++i) out.push_back((tonic + degrees[i]) % 12 + (is_min[i] ? 12 : 0));
  } else {
    const int degrees[6] = {0, 3, 5, 7, 8, 10};
    const bool is_min[6] = {true, false, true, true, false, false};
    for (int i = 0; i < 6; ++i) out.push_back((tonic + degrees[i]) % 12 + (is_min[i] ? 12 : 0));
  }
  return out;
}

}  // namespace detail

// ----------------------------------------------------------------------------
// synth_clip: deterministic (params, seed) -> (audio, exact annotation).

inline std::pair<AudioClip, EventAnnotation> synth_clip(Task task, const SynthParams& params,
                                                        uint64_t seed) {
  params.validate(task);
  RngStream rng(seed);

  const double tempo = params.tempo_bpm != 0.0 ? params.tempo_bpm : rng.uniform(60.0, 180.0);
  const int meter = params.meter != 0 ? params.meter : (rng.bernoulli(0.5) ? 3 : 4);
  const double beat_s = 60.0 / tempo;
  const double bar_s = beat_s * meter;

  double length =
      params.length_s != 0.0
          ? params.length_s
          : ((task == Task::Downbeat || task == Task::Chord) ? rng.uniform(14.0, 30.0) : rng.uniform(32.0, 60.0));

  AudioClip clip;
  EventAnnotation ann;
  ann.task = task;

  switch (task) {
    case Task::Downbeat: {
      const int64_t n = int64_t(std::lrint(length * kSampleRateHz));
      clip.samples.assign(size_t(n), 0.0f);
      const double click_freq = rng.uniform(900.0, 2200.0);
      const double beat_amp = rng.uniform(0.28, 0.4);
      const double bg = params.background_gain >= 0.0 ? params.background_gain : rng.uniform(0.10, 0.26);
      const double noise_sigma = rng.uniform(0.004, 0.014);

      const auto triads = detail::diatonic_triads(int(rng.uniform_int(0, 23)));
      int bar = 0;
      for (double t = 0.0; t < length - 1e-9; t += bar_s, ++bar) {
        const int chord = triads[size_t(rng.uniform_int(0, int64_t(triads.size()) - 1))];
        detail::add_triad(clip.samples, chord, t, std::min(t + bar_s, length), bg, 3);
      }
      int k = 0;
      for (double t = 0.0; t < length - 0.026; t += beat_s, ++k) {
        const bool is_down = (k % meter == 0);
        // downbeat click is +6 dB over a plain beat
        detail::add_click(clip.samples, t, click_freq, is_down ? 2.0 * beat_amp : beat_amp);
        Event e;
        e.onset_s = t;
        e.label = is_down ? "downbeat" : "beat";
        ann.events.push_back(e);
      }
      detail::add_noise(clip.samples, noise_sigma, rng);
      break;
    }

    case Task::Chord: {
      // whole bars only, so chord boundaries land on the annotated grid
      const int bars = std::max(4, int(length / bar_s));
      length = bars * bar_s;
      const int64_t n = int64_t(std::lrint(length * kSampleRateHz));
      clip.samples.assign(size_t(n), 0.0f);
      const double amp = rng.uniform(0.14, 0.2);
      const double noise_sigma = rng.uniform(0.002, 0.008);

      std::vector<std::string> prog = params.progression;
      if (prog.empty()) {
        for (int b = 0; b < bars; ++b) prog.push_back(chord_class_name(int(rng.uniform_int(0, 23))));
      }
      for (int b = 0; b < bars; ++b) {
        const std::string& label = prog[size_t(b) % prog.size()];
        const double t0 = b * bar_s;
        const double t1 = std::min((b + 1) * bar_s, length);
        detail::add_triad(clip.samples, chord_class_index(label), t0, t1, amp, 4);
        if (!ann.events.empty() && ann.events.back().label == label &&
            std::abs(*ann.events.back().offset_s - t0) < 1e-9) {
          ann.events.back().offset_s = t1;  // merge repeated chords
        } else {
          Event e;
          e.onset_s = t0;
          e.offset_s = t1;
          e.label = label;
          ann.events.push_back(e);
        }
      }
      detail::add_noise(clip.samples, noise_sigma, rng);
      break;
    }

    case Task::Key: {
      const int bars = std::max(8, int(length / bar_s));
      length = bars * bar_s;
      const int64_t n = int64_t(std::lrint(length * kSampleRateHz));
      clip.samples.assign(size_t(n), 0.0f);
      const std::string key_label = !params.key.empty() ? params.key : chord_class_name(int(rng.uniform_int(0, 23)));
      const auto triads = detail::diatonic_triads(chord_class_index(key_label));
      const double amp = rng.uniform(0.13, 0.19);
      const double noise_sigma = rng.uniform(0.002, 0.008);

      int chord = triads[0];  // start on the tonic
      for (int b = 0; b < bars; ++b) {
        detail::add_triad(clip.samples, chord, b * bar_s, std::min((b + 1) * bar_s, length), amp, 4);
        chord = triads[size_t(rng.uniform_int(0, int64_t(triads.size()) - 1))];
      }
      detail::add_noise(clip.samples, noise_sigma, rng);

      Event e;
      e.onset_s = 0.0;
      e.offset_s = length;
      e.label = key_label;
      ann.events.push_back(e);
      break;
    }

    case Task::Structure: {
      const int sections = params.num_sections != 0 ? params.num_sections : int(rng.uniform_int(2, 6));
      // sections at least 9 s so decoded boundaries survive the 8 s suppression
      const double min_sec = 9.0;
      if (length < sections * min_sec) length = sections * min_sec + 1.0;
      const int64_t n = int64_t(std::lrint(length * kSampleRateHz));
      clip.samples.assign(size_t(n), 0.0f);

      std::vector<double> bounds(size_t(sections) + 1);
      bounds[0] = 0.0;
      bounds[size_t(sections)] = length;
      for (int s = 1; s < sections; ++s) {
        bounds[size_t(s)] = bounds[size_t(s - 1)] + min_sec;
      }
      double slack = length - sections * min_sec;
      for (int s = 1; s < sections; ++s) {
        const double extra = rng.uniform(0.0, slack / (sections - s + 1));
        for (int j = s; j < sections; ++j) bounds[size_t(j)] += extra;
        slack -= extra;
      }

      const auto key_triads = detail::diatonic_triads(int(rng.uniform_int(0, 23)));
      int prev_cls = -1;
      for (int s = 0; s < sections; ++s) {
        int cls = int(rng.uniform_int(0, 6));
        while (cls == prev_cls) cls = int(rng.uniform_int(0, 6));
        prev_cls = cls;
        const double t0 = bounds[size_t(s)];
        const double t1 = bounds[size_t(s + 1)];
        const int chord = key_triads[size_t(rng.uniform_int(0, int64_t(key_triads.size()) - 1))];
        switch (cls) {
          case 0:  // intro: quiet low pad
            detail::add_triad(clip.samples, chord, t0, t1, 0.08, 2);
            break;
          case 1: {  // verse: mid-level arpeggio
            const auto pcs = detail::triad_pitch_classes(chord);
            double t = t0;
            int i = 0;
            while (t < t1 - 0.2) {
              detail::add_tone(clip.samples, detail::pitch_hz(pcs[size_t(i % 3)], 4), t, t + 0.4, 0.16, 3);
              t += 0.4;
              ++i;
            }
            break;
          }
          case 2:  // chorus: bright, loud triads
            detail::add_triad(clip.samples, chord, t0, t1, 0.22, 6);
            break;
          case 3:  // bridge: minor-color pad plus band noise
            detail::add_triad(clip.samples, (chord % 12) + 12, t0, t1, 0.13, 3);
            for (int64_t i = int64_t(t0 * kSampleRateHz); i < int64_t(t1 * kSampleRateHz) && i < n; ++i)
              clip.samples[size_t(i)] += float(0.02 * rng.normal());
            break;
          case 4: {  // solo: single moving voice
            const auto pcs = detail::triad_pitch_classes(chord);
            double t = t0;
            while (t < t1 - 0.3) {
              const int pc = pcs[size_t(rng.uniform_int(0, 2))];
              detail::add_tone(clip.samples, detail::pitch_hz(pc, 5), t, t + 0.6, 0.2, 2);
              t += 0.6;
            }
            break;
          }
          case 5:  // outro: fading pad
            detail::add_triad(clip.samples, chord, t0, t1, 0.12, 2);
            for (int64_t i = int64_t(t0 * kSampleRateHz); i < int64_t(t1 * kSampleRateHz) && i < n; ++i) {
              const double rel = (double(i) / kSampleRateHz - t0) / std::max(1e-9, t1 - t0);
              clip.samples[size_t(i)] *= float(1.0 - 0.7 * rel);
            }
            break;
          case 6:  // silence
            break;
        }
        Event e;
        e.onset_s = t0;
        e.offset_s = t1;
        e.label = structure_class_names()[size_t(cls)];
        ann.events.push_back(e);
      }
      detail::add_noise(clip.samples, 0.003, rng);
      break;
    }
  }

  detail::normalize_peak(clip.samples);
  clip.sample_rate_hz = kSampleRateHz;
  clip.validate();
  ann.validate();
  return {clip, ann};
}

}  // namespace nsmir::synth
