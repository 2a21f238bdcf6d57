// nsmir/model.hpp
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

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "nsmir/checkpoint.hpp"
#include "nsmir/common.hpp"
#include "nsmir/dsp.hpp"
#include "nsmir/engine.hpp"
#include "nsmir/labels.hpp"
#include "nsmir/model_config.hpp"

namespace nsmir::model {

inline constexpr int kNumFilters = 128;
inline constexpr int kNumHarmonics = 6;
inline constexpr int kStftWin = 1024;
inline constexpr double kFilterFreqLo = 32.7;   // C1
inline constexpr double kFilterFreqHi = 8000.0;

// ----------------------------------------------------------------------------
// Parameter inventory. build() and param_count() share this enumeration, so
// the analytic count always equals the materialized checkpoint exactly.

struct ParamSpec {
  std::string name;
  std::vector<int> shape;
  enum class Init { Glorot, Zero, One, Latent, FilterCenters, FilterAlpha } init = Init::Glorot;
  int fan_in = 0;
  int fan_out = 0;

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
};

inline std::vector<ParamSpec> param_specs(const ModelConfig& c) {
  c.validate();
  using Init = ParamSpec::Init;
  std::vector<ParamSpec> out;
  auto add = [&](std::string name, std::vector<int> shape, Init init, int fi = 0, int fo = 0) {
    out.push_back({std::move(name), std::move(shape), init, fi, fo});
  };
  auto linear = [&](const std::string& name, int in, int o) {
    add(name + ".w", {in, o}, Init::Glorot, in, o);
    add(name + ".b", {o}, Init::Zero);
  };
  auto norm = [&](const std::string& name, int d) {
    add(name + ".g", {d}, Init::One);
    add(name + ".be", {d}, Init::Zero);
  };
  auto attention = [&](const std::string& name, int d) {
    linear(name + ".q", d, d);
    linear(name + ".k", d, d);
    linear(name + ".v", d, d);
    linear(name + ".o", d, d);
  };

  const int SD = c.sd();
  const int TD = c.td();
  const int M = c.conv_mid();
  const int K = c.latent_arrays;
  const int f_pos = kNumFilters / c.pool_f;

  add("fb.centers", {kNumFilters}, Init::FilterCenters);
  add("fb.alpha", {1}, Init::FilterAlpha);

  int c_in = kNumHarmonics;
  for (int r = 0; r < c.residual_units; ++r) {
    const std::string p = "res" + std::to_string(r);
    add(p + ".reduce.w", {M, c_in, 1, 1}, Init::Glorot, c_in, M);
    add(p + ".reduce.b", {M}, Init::Zero);
    norm(p + ".ln1", M);
    add(p + ".mid.w", {M, M, 3, 3}, Init::Glorot, M * 9, M * 9);
    add(p + ".mid.b", {M}, Init::Zero);
    norm(p + ".ln2", M);
    add(p + ".expand.w", {SD, M, 1, 1}, Init::Glorot, M, SD);
    add(p + ".expand.b", {SD}, Init::Zero);
    if (c_in != SD) {
      add(p + ".skip.w", {SD, c_in, 1, 1}, Init::Glorot, c_in, SD);
      add(p + ".skip.b", {SD}, Init::Zero);
    }
    c_in = SD;
  }

  add("freq_pos", {f_pos, SD}, Init::Latent);

  for (int l = 0; l < c.layers; ++l) {
    const std::string p = "blk" + std::to_string(l);
    add(p + ".latent", {K, SD}, Init::Latent);
    norm(p + ".cross.ln_q", SD);
    norm(p + ".cross.ln_kv", SD);
    attention(p + ".cross", SD);
    norm(p + ".lat.ln", SD);
    attention(p + ".lat", SD);
    linear(p + ".t_in", SD, TD);
    for (int s = 0; s < c.temporal_depth; ++s) {
      const std::string q = p + ".t" + std::to_string(s);
      norm(q + ".ln1", TD);
      attention(q, TD);
      norm(q + ".ln2", TD);
      linear(q + ".ff1", TD, 4 * TD);
      linear(q + ".ff2", 4 * TD, TD);
    }
    linear(p + ".t_out", TD, SD);
  }

  norm("head.ln", SD);
  linear("head", K * SD, c.num_classes);
  if (c.has_boundary_head()) linear("head_boundary", K * SD, 1);
  return out;
}

inline int64_t param_count(const ModelConfig& c) {
  int64_t total = 0;
  for (const auto& s : param_specs(c)) total += s.numel();
  return total;
}

// ----------------------------------------------------------------------------
// Model: the config plus named parameter storage (and nothing else; the
// optimizer keeps its own state).

struct Model {
  ModelConfig config;
  std::vector<engine::NamedArray> params;
  std::unordered_map<std::string, int> index;

  engine::NamedArray& at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ParamError("no such parameter: " + name);
    return params[size_t(it->second)];
  }
  const engine::NamedArray& at(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ParamError("no such parameter: " + name);
    return params[size_t(it->second)];
  }
  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& a : params) n += a.numel();
    return n;
  }
};

inline Model build(const ModelConfig& config, uint64_t seed) {
  Model m;
  m.config = config;
  RngStream rng(seed);
  for (const auto& spec : param_specs(config)) {
    engine::NamedArray arr;
    arr.name = spec.name;
    arr.shape = spec.shape;
    arr.data.resize(size_t(spec.numel()));
    switch (spec.init) {
      case ParamSpec::Init::Glorot: {
        const double bound = std::sqrt(6.0 / double(spec.fan_in + spec.fan_out));
        for (auto& v : arr.data) v = float(rng.uniform(-bound, bound));
        break;
      }
      case ParamSpec::Init::Zero:
        break;
      case ParamSpec::Init::One:
        std::fill(arr.data.begin(), arr.data.end(), 1.0f);
        break;
      case ParamSpec::Init::Latent:
        for (auto& v : arr.data) v = float(rng.normal(0.0, 0.02));
        break;
      case ParamSpec::Init::FilterCenters: {
        const double lo = std::log(kFilterFreqLo), hi = std::log(kFilterFreqHi);
        for (int i = 0; i < kNumFilters; ++i) {
          arr.data[size_t(i)] = float(std::exp(lo + (hi - lo) * double(i) / double(kNumFilters - 1)));
        }
        break;
      }
      case ParamSpec::Init::FilterAlpha:
        arr.data[0] = 0.1f;
        break;
    }
    m.index[arr.name] = int(m.params.size());
    m.params.push_back(std::move(arr));
  }
  return m;
}

// Copies arrays whose name and shape match; the opt-in warm start for
// knowledge expansion.
inline int warm_start(Model& student, const Model& teacher) {
  int copied = 0;
  for (auto& arr : student.params) {
    auto it = teacher.index.find(arr.name);
    if (it == teacher.index.end()) continue;
    const auto& src = teacher.params[size_t(it->second)];
    if (src.shape != arr.shape) continue;
    arr.data = src.data;
    ++copied;
  }
  return copied;
}

// ----------------------------------------------------------------------------
// Checkpoint I/O with a JSON sidecar holding the config and its hash, so a
// checkpoint can never be loaded into a mismatched architecture.

inline void save_checkpoint(const Model& m, const std::string& path) {
  engine::save_arrays(path, m.params);
  nlohmann::json meta;
  meta["config"] = m.config.canonical_string();
  meta["config_hash"] = hex64(m.config.hash());
  meta["task"] = task_name(m.config.task);
  meta["round"] = m.config.round;
  meta["scale"] = m.config.scale;
  meta["temporal_depth"] = m.config.temporal_depth;
  std::ofstream f(path + ".meta.json");
  if (!f) throw IoError("cannot write checkpoint metadata");
  f << meta.dump(2) << "\n";
}

inline Model load_checkpoint(const ModelConfig& config, const std::string& path) {
  std::ifstream f(path + ".meta.json");
  if (!f) throw IoError("missing checkpoint metadata: " + path + ".meta.json");
  nlohmann::json meta;
  f >> meta;
  if (meta.at("config_hash").get<std::string>() != hex64(config.hash()))
    throw ParamError("checkpoint config hash mismatch for " + path);
  Model m;
  m.config = config;
  m.params = engine::load_arrays(path);
  for (int i = 0; i < int(m.params.size()); ++i) m.index[m.params[size_t(i)].name] = i;
  // shape audit against the spec inventory
  const auto specs = param_specs(config);
  if (specs.size() != m.params.size()) throw ParamError("checkpoint array count mismatch");
  for (size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].name != m.params[i].name || specs[i].shape != m.params[i].shape)
      throw ParamError("checkpoint array mismatch at " + specs[i].name);
  }
  return m;
}

// ----------------------------------------------------------------------------
// Forward pass.

struct ForwardResult {
  engine::Tensor logits;                         // [frames, num_classes]
  std::optional<engine::Tensor> boundary_logits; // [frames], structure only
  int frames = 0;
  // parameter leaves bound into the graph, keyed by parameter name; the
  // trainer reads gradients from here after backward
  std::unordered_map<std::string, engine::Tensor> bound;
};

namespace detail {

using engine::Tensor;

struct ParamBinder {
  Model* m;
  engine::Graph* g;
  bool trainable;
  std::unordered_map<std::string, Tensor> bound;

  Tensor operator()(const std::string& name) {
    auto it = bound.find(name);
    if (it != bound.end()) return it->second;
    auto& arr = m->at(name);
    Tensor t = g->leaf(arr.shape, arr.data.data(), trainable);
    bound.emplace(name, t);
    return t;
  }
};

// x [A, B, D] -> x * W + b over the last dim.
inline Tensor proj(Tensor x, Tensor w, Tensor b) {
  const int A = x.dim(0), B = x.dim(1), D = x.dim(2);
  Tensor flat = engine::reshape(x, {A * B, D});
  Tensor y = engine::add_bias(engine::matmul(flat, w), b);
  return engine::reshape(y, {A, B, w.dim(1)});
}

// Multi-head attention: q [N, Lq, D] attends over kv [N, Lkv, D].
inline Tensor mha(ParamBinder& P, const std::string& prefix, Tensor q_in, Tensor kv_in, int heads) {
  const int D = q_in.dim(2);
  const int dh = D / heads;
  Tensor Q = proj(q_in, P(prefix + ".q.w"), P(prefix + ".q.b"));
  Tensor K = proj(kv_in, P(prefix + ".k.w"), P(prefix + ".k.b"));
  Tensor V = proj(kv_in, P(prefix + ".v.w"), P(prefix + ".v.b"));
  const float inv_sqrt = 1.0f / std::sqrt(float(dh));
  std::vector<Tensor> head_outs;
  for (int h = 0; h < heads; ++h) {
    Tensor Qh = engine::slice(Q, 2, h * dh, dh);
    Tensor Kh = engine::slice(K, 2, h * dh, dh);
    Tensor Vh = engine::slice(V, 2, h * dh, dh);
    Tensor scores = engine::bmm(Qh, Kh, false, true, inv_sqrt);
    Tensor attn = engine::softmax(scores);
    head_outs.push_back(engine::bmm(attn, Vh));
  }
  Tensor O = heads == 1 ? head_outs[0] : engine::concat(head_outs, 2);
  return proj(O, P(prefix + ".o.w"), P(prefix + ".o.b"));
}

inline Tensor ln(ParamBinder& P, const std::string& prefix, Tensor x) {
  return engine::layer_norm(x, P(prefix + ".g"), P(prefix + ".be"));
}

// LayerNorm across channels of a [C, H, W] feature map.
inline Tensor ln_channels(ParamBinder& P, const std::string& prefix, Tensor x) {
  Tensor t = engine::permute3(x, 1, 2, 0);  // [H, W, C]
  t = engine::layer_norm(t, P(prefix + ".g"), P(prefix + ".be"));
  return engine::permute3(t, 2, 0, 1);
}

inline std::vector<float> sinusoidal_pos(int frames, int dim) {
  std::vector<float> pe(size_t(frames) * dim);
  for (int t = 0; t < frames; ++t) {
    for (int i = 0; i < dim; ++i) {
      const double angle = double(t) / std::pow(10000.0, 2.0 * double(i / 2) / double(dim));
      pe[size_t(t) * dim + i] = float(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

}  // namespace detail

// Full pipeline: log spectrogram -> harmonic filterbank -> residual units ->
// spectro-temporal max pooling -> L PerceiverTF-style blocks -> dense head.
// Output frame count is floor(spec_frames / pool_t).
inline ForwardResult model_forward(Model& m, engine::Graph& g, const dsp::Spectrogram& spec,
                                   bool trainable) {
  using engine::Tensor;
  const ModelConfig& c = m.config;
  if (spec.hop_samples != c.hop) throw ParamError("spectrogram hop does not match model config");
  if (spec.win_samples != kStftWin) throw ParamError("spectrogram window must be 1024");
  if (spec.frames < c.pool_t) throw ParamError("clip shorter than one model frame");

  detail::ParamBinder P{&m, &g, trainable, {}};

  // log compression on the input side; values stay outside the graph
  std::vector<float> logv(spec.values.size());
  for (size_t i = 0; i < logv.size(); ++i) logv[i] = std::log1p(spec.values[i]);

  Tensor x = engine::harmonic_filter({logv.data(), logv.size()}, spec.f_bins, spec.frames,
                                     P("fb.centers"), P("fb.alpha"), kNumHarmonics,
                                     spec.sample_rate_hz, kStftWin);
  x = engine::reshape(x, {kNumHarmonics, kNumFilters, spec.frames});

  const int SD = c.sd();
  const int TD = c.td();
  const int K = c.latent_arrays;
  int c_in = kNumHarmonics;
  for (int r = 0; r < c.residual_units; ++r) {
    const std::string p = "res" + std::to_string(r);
    Tensor h = engine::conv2d(x, P(p + ".reduce.w"), P(p + ".reduce.b"));
    h = engine::relu(detail::ln_channels(P, p + ".ln1", h));
    h = engine::conv2d(h, P(p + ".mid.w"), P(p + ".mid.b"));
    h = engine::relu(detail::ln_channels(P, p + ".ln2", h));
    h = engine::conv2d(h, P(p + ".expand.w"), P(p + ".expand.b"));
    Tensor skip = c_in == SD ? x : engine::conv2d(x, P(p + ".skip.w"), P(p + ".skip.b"));
    x = engine::add(h, skip);
    c_in = SD;
  }

  x = engine::maxpool2d(x, c.pool_f, c.pool_t);  // [SD, f_pos, T']
  const int f_pos = kNumFilters / c.pool_f;
  const int frames_out = x.dim(2);

  Tensor kv = engine::permute3(x, 2, 1, 0);  // [T', f_pos, SD]
  {
    Tensor flat = engine::reshape(kv, {frames_out, f_pos * SD});
    Tensor pos = engine::reshape(P("freq_pos"), {f_pos * SD});
    kv = engine::reshape(engine::add_bias(flat, pos), {frames_out, f_pos, SD});
  }

  Tensor z = g.constant({frames_out, K, SD}, std::vector<float>(size_t(frames_out) * K * SD, 0.0f));
  const auto pe = detail::sinusoidal_pos(frames_out, TD);
  Tensor pe_flat = g.constant({frames_out * TD}, pe);

  for (int l = 0; l < c.layers; ++l) {
    const std::string p = "blk" + std::to_string(l);
    {
      Tensor lat = engine::reshape(P(p + ".latent"), {K * SD});
      Tensor flat = engine::reshape(z, {frames_out, K * SD});
      z = engine::reshape(engine::add_bias(flat, lat), {frames_out, K, SD});
    }
    // spectral cross-attention over frequency positions, per frame
    {
      Tensor qn = detail::ln(P, p + ".cross.ln_q", z);
      Tensor kvn = detail::ln(P, p + ".cross.ln_kv", kv);
      z = engine::add(z, detail::mha(P, p + ".cross", qn, kvn, c.heads));
    }
    // latent self-attention
    {
      Tensor qn = detail::ln(P, p + ".lat.ln", z);
      z = engine::add(z, detail::mha(P, p + ".lat", qn, qn, c.heads));
    }
    // temporal stage: latent rows become sequences across frames
    {
      Tensor u = detail::proj(z, P(p + ".t_in.w"), P(p + ".t_in.b"));  // [T', K, TD]
      u = engine::permute3(u, 1, 0, 2);  // [K, T', TD]
      {
        Tensor flat = engine::reshape(u, {K, frames_out * TD});
        u = engine::reshape(engine::add_bias(flat, pe_flat), {K, frames_out, TD});
      }
      for (int s = 0; s < c.temporal_depth; ++s) {
        const std::string q = p + ".t" + std::to_string(s);
        Tensor an = detail::ln(P, q + ".ln1", u);
        u = engine::add(u, detail::mha(P, q, an, an, c.heads));
        Tensor fn = detail::ln(P, q + ".ln2", u);
        Tensor ff = engine::reshape(fn, {K * frames_out, TD});
        ff = engine::add_bias(engine::matmul(ff, P(q + ".ff1.w")), P(q + ".ff1.b"));
        ff = engine::gelu(ff);
        ff = engine::add_bias(engine::matmul(ff, P(q + ".ff2.w")), P(q + ".ff2.b"));
        u = engine::add(u, engine::reshape(ff, {K, frames_out, TD}));
      }
      u = engine::permute3(u, 1, 0, 2);  // [T', K, TD]
      Tensor back = detail::proj(u, P(p + ".t_out.w"), P(p + ".t_out.b"));
      z = engine::add(z, back);
    }
  }

  Tensor hn = detail::ln(P, "head.ln", z);
  Tensor flat = engine::reshape(hn, {frames_out, K * SD});
  Tensor logits = engine::add_bias(engine::matmul(flat, P("head.w")), P("head.b"));

  ForwardResult res;
  res.logits = logits;
  res.frames = frames_out;
  if (c.has_boundary_head()) {
    Tensor b = engine::add_bias(engine::matmul(flat, P("head_boundary.w")), P("head_boundary.b"));
    res.boundary_logits = engine::reshape(b, {frames_out});
  }
  res.bound = std::move(P.bound);
  return res;
}

// Inference convenience: clip -> soft frame labels (+ boundary for structure).
inline FrameLabelSequence predict(Model& m, const AudioClip& clip) {
  const auto spec = dsp::stft_magnitude(clip, kStftWin, m.config.hop);
  engine::Graph g;
  auto fwd = model_forward(m, g, spec, /*trainable=*/false);
  engine::Tensor probs = engine::softmax(fwd.logits);

  FrameLabelSequence fls;
  fls.spec = task_spec(m.config.task);
  fls.kind = LabelKind::Soft;
  fls.frames = fwd.frames;
  fls.probs.assign(probs.data().begin(), probs.data().end());
  if (fwd.boundary_logits) {
    engine::Tensor b = engine::sigmoid(*fwd.boundary_logits);
    fls.boundary.assign(b.data().begin(), b.data().end());
  }
  return fls;
}

}  // namespace nsmir::model
