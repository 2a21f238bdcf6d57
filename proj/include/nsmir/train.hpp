// nsmir/train.hpp
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

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nsmir/audio.hpp"
#include "nsmir/augment.hpp"
#include "nsmir/checkpoint.hpp"
#include "nsmir/common.hpp"
#include "nsmir/dsp.hpp"
#include "nsmir/labels.hpp"
#include "nsmir/model.hpp"

namespace nsmir::train {

struct TrainConfig {
  float lr = 1e-3f;
  double lr_decay = 0.9;
  int lr_patience = 20;          // stale epochs between plateau decays
  int early_stop_patience = 80;  // stale epochs before stopping
  int batches_per_epoch = 500;   // desk runs override this downward
  int batch_size = 8;
  double chunk_s = 6.0;          // 0 = whole-clip windows
  int max_epochs = 10000;
  uint64_t seed = 0;
  bool literal_weight_decay = false;  // Adam weight decay 0.9 instead of lr plateau decay
  double improve_eps = 1e-6;

  void validate() const {
    if (lr <= 0.0f || batch_size <= 0 || batches_per_epoch <= 0 || max_epochs <= 0)
      throw ParamError("train config values must be positive");
    if (early_stop_patience < lr_patience) throw ParamError("early stop patience must be >= lr patience");
  }
};

inline double task_chunk_s(Task t) {
  switch (t) {
    case Task::Downbeat: return 6.0;
    case Task::Chord: return 12.0;
    case Task::Key:
    case Task::Structure: return 0.0;  // whole clip
  }
  return 6.0;
}

// One drawable training sample: audio on disk, full-clip frame labels in
// memory, and whether the noisy-student policy applies to it.
struct TrainItem {
  std::string id;
  std::string wav_path;
  FrameLabelSequence labels;
  bool augmented = false;
};

// ----------------------------------------------------------------------------
// Chunk sampling. Starts are aligned to the model frame grid
// (hop * pool_t samples) so chunk labels line up with output frames.

struct Chunk {
  AudioClip clip;
  FrameLabelSequence labels;
};

inline std::optional<Chunk> sample_chunk(const AudioClip& clip, const FrameLabelSequence& labels,
                                         double chunk_s, const TaskSpec& spec, RngStream& rng) {
  const int64_t grid = int64_t(spec.spectro_hop_samples) * spec.pool_t;
  Chunk out;
  if (chunk_s <= 0.0) {
    out.clip = clip;
    out.labels = labels;
    return out;
  }
  const int64_t want = int64_t(std::llround(chunk_s * clip.sample_rate_hz));
  if (int64_t(clip.samples.size()) < want) return std::nullopt;  // caller skips with a warning
  if (want % grid != 0) throw ParamError("chunk length must be a multiple of the model frame grid");

  const int64_t max_grid_start = (int64_t(clip.samples.size()) - want) / grid;
  const int64_t start = rng.uniform_int(0, max_grid_start) * grid;
  out.clip.sample_rate_hz = clip.sample_rate_hz;
  out.clip.id = clip.id;
  out.clip.samples.assign(clip.samples.begin() + start, clip.samples.begin() + start + want);

  const int frame0 = int(start / grid);
  const int n_frames = int(want / grid);
  out.labels.spec = labels.spec;
  out.labels.kind = labels.kind;
  out.labels.frames = std::min(n_frames, labels.frames - frame0);
  if (out.labels.frames <= 0) return std::nullopt;
  const int C = labels.spec.num_classes;
  out.labels.probs.assign(labels.probs.begin() + size_t(frame0) * C,
                          labels.probs.begin() + size_t(frame0 + out.labels.frames) * C);
  if (!labels.boundary.empty()) {
    out.labels.boundary.assign(labels.boundary.begin() + frame0,
                               labels.boundary.begin() + frame0 + out.labels.frames);
  }
  return out;
}

// ----------------------------------------------------------------------------
// Fit: chunked minibatch training with plateau lr decay, metric-based early
// stopping, and best-checkpoint tracking.

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double lr = 0.0;
};

struct FitResult {
  model::Model best;
  std::vector<EpochStats> history;
  double best_metric = -1.0;
  int best_epoch = -1;
  bool aborted_numeric = false;
};

using MetricFn = std::function<double(model::Model&)>;

inline void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write history: " + path);
  f << "epoch,train_loss,val_metric,lr\n";
  for (const auto& e : history) {
    f << e.epoch << "," << fmt_g(e.train_loss) << "," << fmt_g(e.val_metric) << "," << fmt_g(e.lr) << "\n";
  }
}

inline std::vector<EpochStats> read_history_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read history: " + path);
  std::vector<EpochStats> out;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    EpochStats e;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &e.epoch, &e.train_loss, &e.val_metric, &e.lr) != 4)
      throw IoError("bad history line: " + line);
    out.push_back(e);
  }
  return out;
}

namespace detail {

// One forward/backward on a single chunk; gradients are accumulated into
// grad_acc (indexed like model.params).
inline double train_step_sample(model::Model& m, const Chunk& chunk,
                                const augment::AugmentPolicy* policy, RngStream& rng,
                                std::vector<std::vector<float>>& grad_acc) {
  AudioClip audio = chunk.clip;
  FrameLabelSequence labels = chunk.labels;

  if (policy != nullptr) {
    if (policy->has(augment::Aug::A1)) {
      double st;
      if (m.config.task == Task::Chord || m.config.task == Task::Key) {
        st = double(rng.uniform_int(-policy->pitch_range_semitones, policy->pitch_range_semitones));
      } else {
        st = rng.uniform(-double(policy->pitch_range_semitones), double(policy->pitch_range_semitones));
      }
      if (st != 0.0) {
        audio = augment::pitch_shift(audio, st);
        labels = augment::shift_labels(labels, st, m.config.task);
      }
    }
    if (policy->has(augment::Aug::A2)) {
      audio = augment::waveform_chain(audio, *policy, rng);
    }
  }

  auto spec = dsp::stft_magnitude(audio, model::kStftWin, m.config.hop);
  if (policy != nullptr) {
    if (policy->has(augment::Aug::A3)) spec = augment::freq_mask(spec, *policy, rng);
    if (policy->has(augment::Aug::A4)) spec = augment::time_mask(spec, *policy, rng);
  }

  engine::Graph g;
  auto fwd = model::model_forward(m, g, spec, /*trainable=*/true);
  const int frames = std::min(fwd.frames, labels.frames);
  engine::Tensor logits = frames == fwd.frames
                              ? fwd.logits
                              : engine::slice(fwd.logits, 0, 0, frames);
  std::span<const float> target(labels.probs.data(), size_t(frames) * labels.spec.num_classes);
  engine::Tensor loss = engine::cross_entropy(logits, target);
  if (fwd.boundary_logits && !labels.boundary.empty()) {
    engine::Tensor blog = frames == fwd.frames ? *fwd.boundary_logits
                                               : engine::slice(*fwd.boundary_logits, 0, 0, frames);
    std::span<const float> btarget(labels.boundary.data(), size_t(frames));
    loss = engine::add(loss, engine::bce_logits(blog, btarget));
  }
  g.backward(loss);

  for (size_t i = 0; i < m.params.size(); ++i) {
    auto it = fwd.bound.find(m.params[i].name);
    if (it == fwd.bound.end()) continue;
    const auto grad = it->second.grad();
    if (grad.empty()) continue;
    auto& acc = grad_acc[i];
    for (size_t k = 0; k < grad.size(); ++k) acc[k] += grad[k];
  }
  return loss.scalar();
}

}  // namespace detail

inline FitResult fit(model::Model initial, const std::vector<TrainItem>& train_items,
                     const augment::AugmentPolicy& policy, MetricFn val_metric, const TrainConfig& tc,
                     const std::vector<EpochStats>& prior_history = {}) {
  tc.validate();
  if (train_items.empty()) throw ParamError("fit: empty training set");

  model::Model m = initial;
  FitResult result;
  result.history = prior_history;

  std::vector<engine::AdamState> opt(m.params.size());
  engine::AdamConfig adam;
  adam.lr = tc.lr;
  adam.weight_decay = tc.literal_weight_decay ? 0.9f : 0.0f;

  // resume bookkeeping from prior history
  int start_epoch = 0;
  int stale = 0;
  for (const auto& e : prior_history) {
    start_epoch = std::max(start_epoch, e.epoch);
    if (e.val_metric > result.best_metric + tc.improve_eps) {
      result.best_metric = e.val_metric;
      result.best_epoch = e.epoch;
      stale = 0;
    } else {
      ++stale;
    }
    adam.lr = float(e.lr);
  }
  if (result.best_metric > -1.0 && !prior_history.empty()) result.best = m;

  const int steps_per_epoch =
      std::min(tc.batches_per_epoch,
               std::max(1, int((train_items.size() + tc.batch_size - 1) / size_t(tc.batch_size))));

  RngStream epoch_rng(RngStream(tc.seed).fork(0x7261696e).next_u64());
  std::vector<std::vector<float>> grad_acc(m.params.size());
  for (size_t i = 0; i < m.params.size(); ++i) grad_acc[i].assign(m.params[i].data.size(), 0.0f);

  for (int epoch = start_epoch + 1; epoch <= tc.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    int loss_count = 0;
    bool diverged = false;

    for (int step = 0; step < steps_per_epoch && !diverged; ++step) {
      for (auto& acc : grad_acc) std::fill(acc.begin(), acc.end(), 0.0f);
      int in_batch = 0;
      double batch_loss = 0.0;
      for (int b = 0; b < tc.batch_size; ++b) {
        // per-sample stream: deterministic regardless of worker scheduling
        RngStream rng = epoch_rng.fork((uint64_t(epoch) << 32) ^ (uint64_t(step) << 16) ^ uint64_t(b));
        const auto& item = train_items[size_t(rng.uniform_int(0, int64_t(train_items.size()) - 1))];
        AudioClip clip = read_wav(item.wav_path);
        clip.id = item.id;
        auto chunk = sample_chunk(clip, item.labels, tc.chunk_s, item.labels.spec, rng);
        if (!chunk) {
          std::fprintf(stderr, "[train] skipping %s: shorter than %.1fs chunk\n", item.id.c_str(), tc.chunk_s);
          continue;
        }
        try {
          batch_loss += detail::train_step_sample(m, *chunk, item.augmented ? &policy : nullptr, rng, grad_acc);
          ++in_batch;
        } catch (const NumericError& e) {
          std::fprintf(stderr, "[train] numeric failure, aborting: %s\n", e.what());
          diverged = true;
          break;
        }
      }
      if (diverged || in_batch == 0) continue;
      const float inv = 1.0f / float(in_batch);
      for (size_t i = 0; i < m.params.size(); ++i) {
        auto& acc = grad_acc[i];
        for (auto& v : acc) v *= inv;
        engine::adam_step(std::span<float>(m.params[i].data), std::span<const float>(acc), opt[i], adam);
      }
      loss_sum += batch_loss / in_batch;
      ++loss_count;
    }

    if (diverged) {
      result.aborted_numeric = true;
      if (result.best_epoch < 0) result.best = m;
      return result;
    }

    EpochStats es;
    es.epoch = epoch;
    es.train_loss = loss_count > 0 ? loss_sum / loss_count : 0.0;
    es.val_metric = val_metric(m);
    es.lr = adam.lr;
    result.history.push_back(es);

    if (es.val_metric > result.best_metric + tc.improve_eps) {
      result.best_metric = es.val_metric;
      result.best_epoch = epoch;
      result.best = m;
      stale = 0;
    } else {
      ++stale;
      if (stale % tc.lr_patience == 0) adam.lr = float(adam.lr * tc.lr_decay);
      if (stale >= tc.early_stop_patience) break;
    }
  }

  if (result.best_epoch < 0) result.best = m;
  return result;
}

}  // namespace nsmir::train
