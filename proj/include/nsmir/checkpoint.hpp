// nsmir/checkpoint.hpp
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
#include <span>
#include <string>
#include <vector>

#include "nsmir/common.hpp"

namespace nsmir::engine {

// Named-array container: magic "NSMT", version u32, count u32, then per
// array: name length u32 + UTF-8 name, rank u32, dims (u32 each), raw
// little-endian f32 payload.

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
};

namespace detail {
inline void put_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
inline uint32_t get_u32(std::ifstream& f) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  if (!f) throw IoError("truncated array container");
  return v;
}
}  // namespace detail

inline void save_arrays(const std::string& path, const std::vector<NamedArray>& arrays) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for write: " + path);
  f.write("NSMT", 4);
  detail::put_u32(f, 1);
  detail::put_u32(f, uint32_t(arrays.size()));
  for (const auto& a : arrays) {
    detail::put_u32(f, uint32_t(a.name.size()));
    f.write(a.name.data(), std::streamsize(a.name.size()));
    detail::put_u32(f, uint32_t(a.shape.size()));
    for (int d : a.shape) detail::put_u32(f, uint32_t(d));
    if (int64_t(a.data.size()) != a.numel()) throw IoError("array size/shape mismatch: " + a.name);
    f.write(reinterpret_cast<const char*>(a.data.data()), std::streamsize(a.data.size() * 4));
  }
  if (!f) throw IoError("write failed: " + path);
}

inline std::vector<NamedArray> load_arrays(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::strncmp(magic, "NSMT", 4) != 0) throw IoError("bad magic in " + path);
  const uint32_t version = detail::get_u32(f);
  if (version != 1) throw IoError("unsupported container version");
  const uint32_t count = detail::get_u32(f);
  std::vector<NamedArray> arrays(count);
  for (auto& a : arrays) {
    const uint32_t name_len = detail::get_u32(f);
    a.name.resize(name_len);
    f.read(a.name.data(), name_len);
    const uint32_t rank = detail::get_u32(f);
    a.shape.resize(rank);
    for (auto& d : a.shape) d = int(detail::get_u32(f));
    a.data.resize(size_t(a.numel()));
    f.read(reinterpret_cast<char*>(a.data.data()), std::streamsize(a.data.size() * 4));
    if (!f) throw IoError("truncated payload in " + path);
  }
  return arrays;
}

// Content hash of a container file; names pseudo-label caches and guards
// config/checkpoint pairing.
inline uint64_t file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[65536];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
    const auto got = f.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    if (!f) break;
  }
  return h;
}

// ----------------------------------------------------------------------------
// Adam with bias correction. State lives beside the parameter arrays; the
// optional weight_decay term is the literal Adam style (off by default, the
// trainer's plateau lr decay is the primary mechanism).

struct AdamState {
  std::vector<float> m;
  std::vector<float> v;
  int64_t step = 0;
};

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
};

inline void adam_step(std::span<float> params, std::span<const float> grads, AdamState& state,
                      const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("adam: param/grad size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0f);
    state.v.assign(params.size(), 0.0f);
  }
  if (state.m.size() != params.size()) throw ShapeError("adam: state size mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(double(cfg.beta1), double(state.step));
  const double bc2 = 1.0 - std::pow(double(cfg.beta2), double(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    const float g = grads[i] + cfg.weight_decay * params[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0f - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0f - cfg.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= float(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

}  // namespace nsmir::engine
