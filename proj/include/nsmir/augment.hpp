// nsmir/augment.hpp
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

#include "nsmir/audio.hpp"
#include "nsmir/common.hpp"
#include "nsmir/dsp.hpp"
#include "nsmir/labels.hpp"

namespace nsmir::augment {

enum class Aug { A1, A2, A3, A4 };  // pitch shift, waveform chain, freq mask, time mask

struct AugmentPolicy {
  std::set<Aug> enabled;
  double a2_probability = 0.8;
  int pitch_range_semitones = 3;
  double mask_fraction_max = 0.25;
  uint64_t seed = 0;
  // A2 stage ranges; tunable, archived with the run config.
  double snr_db_lo = 0.3, snr_db_hi = 0.5;
  double gain_db_lo = -6.0, gain_db_hi = 0.0;
  double hp_cutoff_lo = 20.0, hp_cutoff_hi = 200.0;
  double lp_cutoff_lo = 4000.0, lp_cutoff_hi = 8000.0;

  bool has(Aug a) const { return enabled.count(a) > 0; }

  void validate() const {
    if (a2_probability < 0.0 || a2_probability > 1.0) throw ParamError("a2_probability must be in [0,1]");
    if (pitch_range_semitones < 0) throw ParamError("pitch range must be >= 0");
    if (mask_fraction_max < 0.0 || mask_fraction_max > 1.0) throw ParamError("mask fraction must be in [0,1]");
  }
};

inline std::string augment_set_name(const std::set<Aug>& s) {
  std::string out;
  for (Aug a : s) {
    if (!out.empty()) out += ",";
    out += "A" + std::to_string(int(a) + 1);
  }
  return out;
}

inline std::set<Aug> augment_set_from_name(const std::string& text) {
  std::set<Aug> out;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    std::string tok = text.substr(pos, comma - pos);
    while (!tok.empty() && tok.front() == ' ') tok.erase(tok.begin());
    while (!tok.empty() && tok.back() == ' ') tok.pop_back();
    if (!tok.empty()) {
      if (tok == "A1") out.insert(Aug::A1);
      else if (tok == "A2") out.insert(Aug::A2);
      else if (tok == "A3") out.insert(Aug::A3);
      else if (tok == "A4") out.insert(Aug::A4);
      else throw ParamError("unknown augmentation: " + tok);
    }
    pos = comma + 1;
  }
  return out;
}

// ----------------------------------------------------------------------------
// A1: pitch shift. Resample by 2^(-st/12), then phase-vocoder stretch back,
// so the output length equals the input length exactly.

inline AudioClip pitch_shift(const AudioClip& clip, double semitones) {
  if (std::abs(semitones) > 12.0) throw ParamError("pitch shift limited to +-12 semitones");
  AudioClip out = clip;
  if (semitones == 0.0) return out;
  const double factor = std::pow(2.0, semitones / 12.0);
  const size_t resampled_len = std::max<size_t>(2, size_t(std::llround(double(clip.samples.size()) / factor)));
  auto resampled = dsp::resample_hermite(clip.samples, resampled_len, factor);
  out.samples = dsp::time_stretch_to_length(resampled, clip.samples.size());
  for (auto& v : out.samples) v = std::clamp(v, -1.0f, 1.0f);
  return out;
}

// ----------------------------------------------------------------------------
// A2 stages. Kept as standalone pieces so each contract is testable in
// isolation; the chain clips to [-1, 1] only at the end.

// Additive white noise at an exact SNR: the drawn noise is rescaled to the
// measured target, so the realized SNR matches to float precision.
inline void add_noise_at_snr_db(std::vector<float>& x, double snr_db, RngStream& rng) {
  double sig_power = 0.0;
  for (float v : x) sig_power += double(v) * v;
  sig_power /= double(x.size());
  if (sig_power <= 0.0) return;
  std::vector<float> noise(x.size());
  double noise_power = 0.0;
  for (auto& v : noise) {
    v = float(rng.normal());
    noise_power += double(v) * v;
  }
  noise_power /= double(noise.size());
  const double target_power = sig_power / std::pow(10.0, snr_db / 10.0);
  const double g = std::sqrt(target_power / noise_power);
  for (size_t i = 0; i < x.size(); ++i) x[i] += float(g * noise[i]);
}

inline void apply_gain_db(std::vector<float>& x, double gain_db) {
  const float g = float(std::pow(10.0, gain_db / 20.0));
  for (auto& v : x) v *= g;
}

inline void invert_polarity(std::vector<float>& x) {
  for (auto& v : x) v = -v;
}

// Chain order: noise -> gain -> one of {high-pass, low-pass} -> polarity.
// The whole chain fires with probability a2_probability.
inline AudioClip waveform_chain(const AudioClip& clip, const AugmentPolicy& policy, RngStream& rng) {
  policy.validate();
  AudioClip out = clip;
  if (!rng.bernoulli(policy.a2_probability)) return out;

  add_noise_at_snr_db(out.samples, rng.uniform(policy.snr_db_lo, policy.snr_db_hi), rng);
  apply_gain_db(out.samples, rng.uniform(policy.gain_db_lo, policy.gain_db_hi));
  if (rng.bernoulli(0.5)) {
    dsp::Biquad::high_pass(rng.uniform(policy.hp_cutoff_lo, policy.hp_cutoff_hi), clip.sample_rate_hz)
        .apply(out.samples);
  } else {
    dsp::Biquad::low_pass(rng.uniform(policy.lp_cutoff_lo, policy.lp_cutoff_hi), clip.sample_rate_hz)
        .apply(out.samples);
  }
  if (rng.bernoulli(0.5)) invert_polarity(out.samples);
  for (auto& v : out.samples) v = std::clamp(v, -1.0f, 1.0f);
  return out;
}

// ----------------------------------------------------------------------------
// A3/A4: two contiguous zeroed blocks on the frequency or time axis, each of
// width uniform in [0, mask_fraction_max * extent]. Blocks may overlap.

inline dsp::Spectrogram freq_mask(const dsp::Spectrogram& spec, const AugmentPolicy& policy, RngStream& rng) {
  dsp::Spectrogram out = spec;
  const int max_w = int(policy.mask_fraction_max * spec.f_bins);
  for (int block = 0; block < 2; ++block) {
    const int w = int(rng.uniform_int(0, max_w));
    if (w == 0) continue;
    const int start = int(rng.uniform_int(0, spec.f_bins - w));
    for (int f = start; f < start + w; ++f) {
      std::fill(out.values.begin() + size_t(f) * spec.frames,
                out.values.begin() + size_t(f + 1) * spec.frames, 0.0f);
    }
  }
  return out;
}

inline dsp::Spectrogram time_mask(const dsp::Spectrogram& spec, const AugmentPolicy& policy, RngStream& rng) {
  dsp::Spectrogram out = spec;
  const int max_w = int(policy.mask_fraction_max * spec.frames);
  for (int block = 0; block < 2; ++block) {
    const int w = int(rng.uniform_int(0, max_w));
    if (w == 0) continue;
    const int start = int(rng.uniform_int(0, spec.frames - w));
    for (int f = 0; f < spec.f_bins; ++f) {
      for (int t = start; t < start + w; ++t) out.at(f, t) = 0.0f;
    }
  }
  return out;
}

// ----------------------------------------------------------------------------
// Label co-transform under A1. Chord/Key class circles rotate by the shift
// (mod 12), "none" stays put; other tasks are pitch-invariant.

inline FrameLabelSequence shift_labels(const FrameLabelSequence& fls, double semitones, Task task) {
  FrameLabelSequence out = fls;
  if (task != Task::Chord && task != Task::Key) return out;
  if (std::abs(semitones - std::round(semitones)) > 1e-9)
    throw ParamError("chord/key labels only transform under integer semitone shifts");
  int shift = int(std::lround(semitones)) % 12;
  if (shift < 0) shift += 12;
  if (shift == 0) return out;

  for (int t = 0; t < fls.frames; ++t) {
    for (int c = 0; c < fls.spec.num_classes; ++c) {
      int dst = c;
      if (c < 12) dst = (c + shift) % 12;
      else if (c < 24) dst = 12 + (c - 12 + shift) % 12;
      out.at(t, dst) = fls.at(t, c);
    }
  }
  return out;
}

}  // namespace nsmir::augment
