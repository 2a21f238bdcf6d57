// nsmir/common.hpp
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
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <mutex>
#include <queue>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace nsmir {

// ----------------------------------------------------------------------------
// Error taxonomy. Exit-code mapping lives in the CLI.

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid user-supplied parameter or config value.
struct ParamError : Error {
  explicit ParamError(const std::string& msg) : Error(msg) {}
};

// Tensor/matrix shape incompatibility.
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// NaN/Inf or other numeric breakdown.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Filesystem / serialization failure.
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Label outside the task vocabulary.
struct VocabError : Error {
  explicit VocabError(const std::string& msg) : Error(msg) {}
};

// ----------------------------------------------------------------------------
// Deterministic RNG. std::mt19937 distributions are implementation-defined,
// so all draws below are fully specified here (xoshiro256** core).

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class RngStream {
 public:
  explicit RngStream(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform double in [0, 1) with 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive. Rejection sampling, no modulo bias.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) throw ParamError("uniform_int: empty range");
    uint64_t span = uint64_t(hi - lo) + 1;
    if (span == 0) return int64_t(next_u64());  // full 64-bit range
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t draw;
    do {
      draw = next_u64();
    } while (draw >= limit);
    return lo + int64_t(draw % span);
  }

  // Standard normal via Box-Muller. One fresh pair per call; the spare is
  // discarded so results never depend on call-site pairing.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Child stream decorrelated by tag; used for per-clip streams so parallel
  // schedules cannot change results.
  RngStream fork(uint64_t tag) const {
    uint64_t mix = state_[0] ^ rotl(state_[2], 13) ^ (tag * 0x9e3779b97f4a7c15ULL);
    return RngStream(mix);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t state_[4];
};

// FNV-1a; stable across platforms, used for id-keyed rng forks and cache names.
inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a_bytes(const void* data, size_t n) {
  uint64_t h = 0xcbf29ce484222325ULL;
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

// Deterministic float formatting for CSV/report output.
inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::string(buf);
}

// ----------------------------------------------------------------------------
// Worker pool for per-clip parallel work (generation, pseudo-labeling).
// Each job must own its rng fork; jobs may complete in any order.

inline int env_thread_cap() {
  const char* raw = std::getenv("NSMIR_THREADS");
  if (raw == nullptr) return 1;
  int v = std::atoi(raw);
  return v < 1 ? 1 : v;
}

class WorkerPool {
 public:
  explicit WorkerPool(int threads) : stop_(false) {
    for (int i = 0; i < threads; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  ~WorkerPool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  void submit(std::function<void()> job) {
    {
      std::lock_guard<std::mutex> lk(mu_);
      jobs_.push(std::move(job));
      ++pending_;
    }
    cv_.notify_one();
  }

  void wait_idle() {
    std::unique_lock<std::mutex> lk(mu_);
    idle_cv_.wait(lk, [this] { return pending_ == 0; });
  }

 private:
  void worker_loop() {
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [this] { return stop_ || !jobs_.empty(); });
        if (stop_ && jobs_.empty()) return;
        job = std::move(jobs_.front());
        jobs_.pop();
      }
      job();
      {
        std::lock_guard<std::mutex> lk(mu_);
        if (--pending_ == 0) idle_cv_.notify_all();
      }
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::queue<std::function<void()>> jobs_;
  std::vector<std::thread> workers_;
  int pending_ = 0;
  bool stop_;
};

// Runs fn(i) for i in [0, n), on `threads` workers if > 1, else inline.
// fn must be independent across i.
inline void parallel_for(int64_t n, int threads, const std::function<void(int64_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  WorkerPool pool(threads);
  for (int64_t i = 0; i < n; ++i) {
    pool.submit([&fn, i] { fn(i); });
  }
  pool.wait_idle();
}

}  // namespace nsmir
