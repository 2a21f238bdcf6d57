// nsmir/audio.hpp
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

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nsmir/common.hpp"

namespace nsmir {

inline constexpr int kSampleRateHz = 16000;

// Mono PCM clip, the unit of ingestion and augmentation.
struct AudioClip {
  std::vector<float> samples;  // amplitudes in [-1, 1]
  int sample_rate_hz = kSampleRateHz;
  std::string id;

  double duration_s() const { return double(samples.size()) / sample_rate_hz; }

  void validate() const {
    if (sample_rate_hz != kSampleRateHz) throw ParamError("clip " + id + ": sample rate must be 16000");
    if (samples.empty()) throw ParamError("clip " + id + ": empty");
    for (float v : samples) {
      if (!std::isfinite(v)) throw NumericError("clip " + id + ": non-finite sample");
    }
  }
};

inline float clip_rms(const AudioClip& c) {
  double acc = 0.0;
  for (float v : c.samples) acc += double(v) * v;
  return float(std::sqrt(acc / double(c.samples.size())));
}

// ----------------------------------------------------------------------------
// WAV, PCM16 little-endian mono. The only audio container we read or write.

namespace detail {
inline void put_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u16(std::ofstream& f, uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); }
}  // namespace detail

inline void write_wav(const std::string& path, const AudioClip& clip) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  const uint32_t n = uint32_t(clip.samples.size());
  const uint32_t data_bytes = n * 2;
  f.write("RIFF", 4);
  detail::put_u32(f, 36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  detail::put_u32(f, 16);
  detail::put_u16(f, 1);  // PCM
  detail::put_u16(f, 1);  // mono
  detail::put_u32(f, uint32_t(clip.sample_rate_hz));
  detail::put_u32(f, uint32_t(clip.sample_rate_hz) * 2);
  detail::put_u16(f, 2);
  detail::put_u16(f, 16);
  f.write("data", 4);
  detail::put_u32(f, data_bytes);
  for (float v : clip.samples) {
    float c = std::max(-1.0f, std::min(1.0f, v));
    int16_t s = int16_t(std::lrint(c * 32767.0f));
    f.write(reinterpret_cast<const char*>(&s), 2);
  }
  if (!f) throw IoError("write failed: " + path);
}

inline AudioClip read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char tag[5] = {0};
  uint32_t u32 = 0;
  uint16_t u16 = 0;
  auto get_u32 = [&] { f.read(reinterpret_cast<char*>(&u32), 4); return u32; };
  auto get_u16 = [&] { f.read(reinterpret_cast<char*>(&u16), 2); return u16; };

  f.read(tag, 4);
  if (std::strncmp(tag, "RIFF", 4) != 0) throw IoError("not a RIFF file: " + path);
  get_u32();
  f.read(tag, 4);
  if (std::strncmp(tag, "WAVE", 4) != 0) throw IoError("not a WAVE file: " + path);

  AudioClip clip;
  uint16_t channels = 0, bits = 0;
  bool got_fmt = false;
  while (f.read(tag, 4)) {
    const uint32_t chunk = get_u32();
    if (std::strncmp(tag, "fmt ", 4) == 0) {
      const uint16_t fmt = get_u16();
      channels = get_u16();
      clip.sample_rate_hz = int(get_u32());
      get_u32();
      get_u16();
      bits = get_u16();
      if (chunk > 16) f.seekg(chunk - 16, std::ios::cur);
      if (fmt != 1 || bits != 16) throw IoError("only PCM16 supported: " + path);
      got_fmt = true;
    } else if (std::strncmp(tag, "data", 4) == 0) {
      if (!got_fmt) throw IoError("data before fmt: " + path);
      const uint32_t n_samples = chunk / 2 / channels;
      clip.samples.resize(n_samples);
      std::vector<int16_t> raw(size_t(chunk / 2));
      f.read(reinterpret_cast<char*>(raw.data()), chunk);
      if (!f) throw IoError("truncated data chunk: " + path);
      for (uint32_t i = 0; i < n_samples; ++i) {
        clip.samples[i] = float(raw[size_t(i) * channels]) / 32767.0f;  // first channel
      }
      return clip;
    } else {
      f.seekg(chunk, std::ios::cur);
    }
  }
  throw IoError("no data chunk: " + path);
}

}  // namespace nsmir
