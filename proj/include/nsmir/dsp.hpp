// nsmir/dsp.hpp
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
#include <complex>
#include <cstdint>
#include <vector>

#include "nsmir/audio.hpp"
#include "nsmir/common.hpp"

namespace nsmir::dsp {

// ----------------------------------------------------------------------------
// FFT: iterative radix-2, power-of-two sizes only.

inline bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const size_t n = a.size();
  if (!is_pow2(n)) throw ParamError("fft: size must be a power of two");
  // bit reversal
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * M_PI / double(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= double(n);
  }
}

// One-sided complex spectrum (n/2 + 1 bins) of a real frame.
inline std::vector<std::complex<double>> rfft(const std::vector<double>& frame) {
  std::vector<std::complex<double>> a(frame.size());
  for (size_t i = 0; i < frame.size(); ++i) a[i] = {frame[i], 0.0};
  fft_inplace(a, false);
  a.resize(frame.size() / 2 + 1);
  return a;
}

inline std::vector<double> irfft(const std::vector<std::complex<double>>& half, size_t n) {
  std::vector<std::complex<double>> a(n);
  for (size_t i = 0; i <= n / 2; ++i) a[i] = half[i];
  for (size_t i = n / 2 + 1; i < n; ++i) a[i] = std::conj(half[n - i]);
  fft_inplace(a, true);
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = a[i].real();
  return out;
}

// Periodic Hann window.
inline std::vector<double> hann(size_t n) {
  std::vector<double> w(n);
  for (size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * double(i) / double(n));
  return w;
}

// ----------------------------------------------------------------------------
// Spectrogram. Row-major [F_bins][T] so a frequency row is contiguous.

struct Spectrogram {
  std::vector<float> values;  // f_bins * frames, row-major
  int f_bins = 0;
  int frames = 0;
  int hop_samples = 0;
  int win_samples = 0;
  int sample_rate_hz = 0;

  float& at(int f, int t) { return values[size_t(f) * frames + t]; }
  float at(int f, int t) const { return values[size_t(f) * frames + t]; }
};

// Mirror-reflected sample (no edge repetition), clamped for tiny signals.
inline double reflect_sample(const std::vector<float>& x, int64_t i) {
  const int64_t n = int64_t(x.size());
  if (n == 1) return x[0];
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return x[size_t(i)];
}

// STFT magnitude with center padding: frame t covers samples
// [t*hop - win/2, t*hop + win/2) of the clip, so frames = floor(len/hop) + 1.
inline Spectrogram stft_magnitude(const AudioClip& clip, int win, int hop) {
  if (clip.samples.empty()) throw ParamError("stft: empty clip");
  if (hop <= 0 || hop > win) throw ParamError("stft: need 0 < hop <= win");
  if (!is_pow2(size_t(win))) throw ParamError("stft: window must be a power of two");

  const int64_t len = int64_t(clip.samples.size());
  const int frames = int(len / hop) + 1;
  const int f_bins = win / 2 + 1;
  const auto w = hann(static_cast<size_t>(win));

  Spectrogram spec;
  spec.f_bins = f_bins;
  spec.frames = frames;
  spec.hop_samples = hop;
  spec.win_samples = win;
  spec.sample_rate_hz = clip.sample_rate_hz;
  spec.values.assign(size_t(f_bins) * frames, 0.0f);

  std::vector<double> frame(static_cast<size_t>(win));
  for (int t = 0; t < frames; ++t) {
    const int64_t start = int64_t(t) * hop - win / 2;
    for (int i = 0; i < win; ++i) {
      frame[size_t(i)] = reflect_sample(clip.samples, start + i) * w[size_t(i)];
    }
    auto half = rfft(frame);
    for (int f = 0; f < f_bins; ++f) {
      spec.at(f, t) = float(std::abs(half[size_t(f)]));
    }
  }
  return spec;
}

// Elementwise log(1 + s) compression; shape-preserving, monotone.
inline Spectrogram to_log(const Spectrogram& spec) {
  Spectrogram out = spec;
  for (auto& v : out.values) v = std::log1p(v);
  return out;
}

// ----------------------------------------------------------------------------
// Resampling: cubic Hermite (Catmull-Rom) on the original grid.
// out[i] = x(i * step). Adequate for narrowband synthetic material.

inline std::vector<float> resample_hermite(const std::vector<float>& x, size_t out_len, double step) {
  const int64_t n = int64_t(x.size());
  std::vector<float> out(out_len);
  auto sample = [&](int64_t i) -> double {
    if (i < 0) i = 0;
    if (i >= n) i = n - 1;
    return x[size_t(i)];
  };
  for (size_t k = 0; k < out_len; ++k) {
    const double pos = double(k) * step;
    const int64_t i = int64_t(std::floor(pos));
    const double t = pos - double(i);
    const double pm1 = sample(i - 1), p0 = sample(i), p1 = sample(i + 1), p2 = sample(i + 2);
    const double a = -0.5 * pm1 + 1.5 * p0 - 1.5 * p1 + 0.5 * p2;
    const double b = pm1 - 2.5 * p0 + 2.0 * p1 - 0.5 * p2;
    const double c = -0.5 * pm1 + 0.5 * p1;
    out[k] = float(((a * t + b) * t + c) * t + p0);
  }
  return out;
}

// ----------------------------------------------------------------------------
// RBJ biquad (Q = 1/sqrt(2)), direct form II transposed.

struct Biquad {
  double b0, b1, b2, a1, a2;

  static Biquad low_pass(double cutoff_hz, double sample_rate_hz) {
    return from_poles(cutoff_hz, sample_rate_hz, /*high=*/false);
  }
  static Biquad high_pass(double cutoff_hz, double sample_rate_hz) {
    return from_poles(cutoff_hz, sample_rate_hz, /*high=*/true);
  }

  void apply(std::vector<float>& x) const {
    double z1 = 0.0, z2 = 0.0;
    for (auto& v : x) {
      const double in = v;
      const double out = b0 * in + z1;
      z1 = b1 * in - a1 * out + z2;
      z2 = b2 * in - a2 * out;
      v = float(out);
    }
  }

 private:
  static Biquad from_poles(double cutoff_hz, double sr, bool high) {
    const double q = 1.0 / std::sqrt(2.0);
    const double w0 = 2.0 * M_PI * cutoff_hz / sr;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double cw = std::cos(w0);
    const double a0 = 1.0 + alpha;
    Biquad f{};
    if (high) {
      f.b0 = (1.0 + cw) / 2.0 / a0;
      f.b1 = -(1.0 + cw) / a0;
      f.b2 = (1.0 + cw) / 2.0 / a0;
    } else {
      f.b0 = (1.0 - cw) / 2.0 / a0;
      f.b1 = (1.0 - cw) / a0;
      f.b2 = (1.0 - cw) / 2.0 / a0;
    }
    f.a1 = (-2.0 * cw) / a0;
    f.a2 = (1.0 - alpha) / a0;
    return f;
  }
};

// ----------------------------------------------------------------------------
// Phase-vocoder time stretch to an exact output length. Complex STFT at
// hop 256 / win 1024, frame-index resampling with phase accumulation, then
// Hann overlap-add resynthesis.

inline std::vector<float> time_stretch_to_length(const std::vector<float>& x, size_t target_len) {
  const int win = 1024;
  const int hop = 256;
  if (x.size() < 2 || target_len < 2) {
    std::vector<float> out(target_len, 0.0f);
    for (size_t i = 0; i < std::min(target_len, x.size()); ++i) out[i] = x[i];
    return out;
  }

  const auto w = hann(static_cast<size_t>(win));
  const int f_bins = win / 2 + 1;
  const int in_frames = int(int64_t(x.size()) / hop) + 1;

  // analysis
  std::vector<std::vector<std::complex<double>>> spec(static_cast<size_t>(in_frames));
  {
    std::vector<float> xs(x.begin(), x.end());
    std::vector<double> frame(static_cast<size_t>(win));
    for (int t = 0; t < in_frames; ++t) {
      const int64_t start = int64_t(t) * hop - win / 2;
      for (int i = 0; i < win; ++i) frame[size_t(i)] = reflect_sample(xs, start + i) * w[size_t(i)];
      spec[size_t(t)] = rfft(frame);
    }
  }

  const double ratio = double(target_len) / double(x.size());
  const int out_frames = std::max(2, int(std::ceil(double(in_frames) * ratio)));

  std::vector<double> omega(static_cast<size_t>(f_bins));
  for (int f = 0; f < f_bins; ++f) omega[size_t(f)] = 2.0 * M_PI * double(f) / double(win) * hop;

  std::vector<double> phase(static_cast<size_t>(f_bins));
  for (int f = 0; f < f_bins; ++f) phase[size_t(f)] = std::arg(spec[0][size_t(f)]);

  auto principal = [](double a) {
    while (a > M_PI) a -= 2.0 * M_PI;
    while (a < -M_PI) a += 2.0 * M_PI;
    return a;
  };

  // synthesis frames with accumulated phase
  std::vector<float> out(target_len + size_t(win), 0.0f);
  std::vector<double> norm(target_len + size_t(win), 0.0);
  std::vector<std::complex<double>> frame_spec(static_cast<size_t>(f_bins));
  for (int k = 0; k < out_frames; ++k) {
    const double pos = double(k) / ratio;
    const int i0 = std::min(int(std::floor(pos)), in_frames - 1);
    const int i1 = std::min(i0 + 1, in_frames - 1);
    const double frac = pos - double(i0);
    for (int f = 0; f < f_bins; ++f) {
      const double m0 = std::abs(spec[size_t(i0)][size_t(f)]);
      const double m1 = std::abs(spec[size_t(i1)][size_t(f)]);
      const double mag = (1.0 - frac) * m0 + frac * m1;
      frame_spec[size_t(f)] = std::polar(mag, phase[size_t(f)]);
      const double dphi =
          principal(std::arg(spec[size_t(i1)][size_t(f)]) - std::arg(spec[size_t(i0)][size_t(f)]) - omega[size_t(f)]);
      phase[size_t(f)] += omega[size_t(f)] + dphi;
    }
    auto frame = irfft(frame_spec, size_t(win));
    const int64_t start = int64_t(k) * hop;
    for (int i = 0; i < win; ++i) {
      const int64_t idx = start + i;
      if (idx < 0 || idx >= int64_t(out.size())) continue;
      out[size_t(idx)] += float(frame[size_t(i)] * w[size_t(i)]);
      norm[size_t(idx)] += w[size_t(i)] * w[size_t(i)];
    }
  }
  for (size_t i = 0; i < out.size(); ++i) {
    if (norm[i] > 1e-8) out[i] = float(out[i] / norm[i]);
  }
  // drop the half-window lead-in from centered analysis
  std::vector<float> trimmed(target_len);
  for (size_t i = 0; i < target_len; ++i) {
    const size_t src = i + size_t(win / 2);
    trimmed[i] = src < out.size() ? out[src] : 0.0f;
  }
  return trimmed;
}

}  // namespace nsmir::dsp
