// nsmir/model_config.hpp
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

#include <string>

#include "nsmir/common.hpp"
#include "nsmir/tasks.hpp"

namespace nsmir::model {

// Architecture hyperparameters for one (task, round) preset. spec_dim and
// temp_dim are the full-size dims; `scale` shrinks them (rounded to a
// multiple of `heads`) for desk-size runs. temporal_depth is the number of
// attention+FF sublayers in each block's temporal stage.
struct ModelConfig {
  Task task = Task::Downbeat;
  int round = 1;
  int residual_units = 1;
  int pool_f = 2;
  int pool_t = 2;
  int hop = 160;
  int layers = 5;
  int spec_dim = 32;
  int temp_dim = 128;
  int heads = 4;
  int latent_arrays = 4;
  int num_classes = 3;
  int temporal_depth = 11;
  double scale = 1.0;

  int scaled(int base_dim) const {
    const double want = base_dim * scale;
    int units = int(std::lround(want / heads));
    if (units < 1) units = 1;
    return units * heads;
  }
  int sd() const { return scaled(spec_dim); }
  int td() const { return scaled(temp_dim); }
  int conv_mid() const { return std::max(1, sd() / 4); }
  bool has_boundary_head() const { return task == Task::Structure; }

  void validate() const {
    if (round < 1 || round > 3) throw ParamError("round must be 1..3");
    if (scale <= 0.0 || scale > 1.0) throw ParamError("scale must be in (0, 1]");
    if (spec_dim <= 0 || temp_dim <= 0 || heads <= 0 || layers <= 0 || latent_arrays <= 0 ||
        temporal_depth <= 0 || residual_units <= 0)
      throw ParamError("model dims must be positive");
    if (spec_dim % heads != 0 || temp_dim % heads != 0)
      throw ParamError("spec/temp dims must divide by heads");
  }

  std::string canonical_string() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s r%d R%d pool(%d,%d) hop%d L%d sd%d td%d h%d k%d c%d tde%d s%.6f",
                  task_name(task), round, residual_units, pool_f, pool_t, hop, layers, spec_dim,
                  temp_dim, heads, latent_arrays, num_classes, temporal_depth, scale);
    return std::string(buf);
  }

  uint64_t hash() const { return fnv1a(canonical_string()); }
};

// The twelve presets: four tasks, three rounds each. Per-task geometry
// (hop, pooling, residual units) is fixed across rounds; transformer
// dims, depth, heads and latent-array count grow with the round.
inline ModelConfig model_table(Task task, int round, double scale = 1.0) {
  if (round < 1 || round > 3) throw ParamError("round must be 1..3");
  ModelConfig c;
  c.task = task;
  c.round = round;
  c.scale = scale;
  const TaskSpec ts = task_spec(task);
  c.residual_units = ts.residual_units;
  c.pool_f = ts.pool_f;
  c.pool_t = ts.pool_t;
  c.hop = ts.spectro_hop_samples;
  c.num_classes = ts.num_classes;
  c.temporal_depth = round == 3 ? 18 : 11;

  switch (task) {
    case Task::Downbeat: {
      const int L[3] = {5, 5, 6}, sdim[3] = {32, 64, 256}, tdim[3] = {128, 256, 256};
      const int hd[3] = {4, 4, 4}, la[3] = {4, 4, 4};
      c.layers = L[round - 1];
      c.spec_dim = sdim[round - 1];
      c.temp_dim = tdim[round - 1];
      c.heads = hd[round - 1];
      c.latent_arrays = la[round - 1];
      break;
    }
    case Task::Chord: {
      const int L[3] = {5, 5, 6}, sdim[3] = {64, 128, 256}, tdim[3] = {64, 128, 256};
      const int hd[3] = {4, 4, 8}, la[3] = {8, 8, 8};
      c.layers = L[round - 1];
      c.spec_dim = sdim[round - 1];
      c.temp_dim = tdim[round - 1];
      c.heads = hd[round - 1];
      c.latent_arrays = la[round - 1];
      break;
    }
    case Task::Key: {
      const int L[3] = {5, 5, 8}, sdim[3] = {128, 256, 512}, tdim[3] = {32, 64, 128};
      const int hd[3] = {4, 4, 8}, la[3] = {4, 4, 8};
      c.layers = L[round - 1];
      c.spec_dim = sdim[round - 1];
      c.temp_dim = tdim[round - 1];
      c.heads = hd[round - 1];
      c.latent_arrays = la[round - 1];
      break;
    }
    case Task::Structure: {
      const int L[3] = {5, 5, 6}, sdim[3] = {64, 128, 256}, tdim[3] = {64, 128, 256};
      const int hd[3] = {4, 4, 8}, la[3] = {8, 8, 8};
      c.layers = L[round - 1];
      c.spec_dim = sdim[round - 1];
      c.temp_dim = tdim[round - 1];
      c.heads = hd[round - 1];
      c.latent_arrays = la[round - 1];
      break;
    }
  }
  c.validate();
  return c;
}

// Knowledge-expansion step: the next round's preset at the same scale.
// Students are freshly initialized; weight copying is a separate opt-in.
inline ModelConfig expand(const ModelConfig& from, int round_from, int round_to) {
  if (round_to != round_from + 1) throw ParamError("expand: round_to must be round_from + 1");
  if (round_to > 3) throw ParamError("expand: no round beyond 3");
  ModelConfig next = model_table(from.task, round_to, from.scale);
  return next;
}

}  // namespace nsmir::model
