// nsmir/semisup.hpp
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

#include <filesystem>
#include <string>
#include <vector>

#include "nsmir/augment.hpp"
#include "nsmir/checkpoint.hpp"
#include "nsmir/common.hpp"
#include "nsmir/evaluate.hpp"
#include "nsmir/manifest.hpp"
#include "nsmir/model.hpp"
#include "nsmir/report.hpp"
#include "nsmir/train.hpp"

namespace nsmir::semisup {

// One noisy-student round: the student architecture, the augmentation set it
// trains under, and the unlabeled tier it consumes.
struct RoundSpec {
  model::ModelConfig config;
  augment::AugmentPolicy policy;
};

struct RoundPlan {
  Task task = Task::Downbeat;
  double scale = 1.0;
  std::vector<RoundSpec> rounds;   // rounds 1..3
  bool warm_start_students = false;
  bool augment_labeled = false;    // A1/A2 on supervised samples too
  uint64_t seed = 0;
  int temporal_depth_override = 0; // 0 = use the preset depth
};

// Round-r augmentation set: round 1 trains with A1+A2, later rounds add the
// task's masking augmentation (time masks for downbeat, frequency masks
// otherwise).
inline std::set<augment::Aug> round_augmentations(Task task, int round) {
  using augment::Aug;
  std::set<Aug> s = {Aug::A1, Aug::A2};
  if (round >= 2) s.insert(task == Task::Downbeat ? Aug::A4 : Aug::A3);
  return s;
}

inline RoundPlan default_plan(Task task, double scale, uint64_t seed, int temporal_depth_override = 0) {
  RoundPlan plan;
  plan.task = task;
  plan.scale = scale;
  plan.seed = seed;
  plan.temporal_depth_override = temporal_depth_override;
  for (int r = 1; r <= 3; ++r) {
    RoundSpec rs;
    rs.config = model::model_table(task, r, scale);
    if (temporal_depth_override > 0) rs.config.temporal_depth = temporal_depth_override;
    rs.policy.enabled = round_augmentations(task, r);
    rs.policy.seed = seed ^ uint64_t(r);
    plan.rounds.push_back(rs);
  }
  return plan;
}

// ----------------------------------------------------------------------------
// Dataset assembly.

inline train::TrainItem load_labeled_item(const CorpusManifest& manifest, const ManifestEntry& entry,
                                          bool augmented) {
  namespace fs = std::filesystem;
  if (!entry.label_path) throw ParamError("labeled item without label: " + entry.clip_path);
  const std::string wav = (fs::path(manifest.root) / entry.clip_path).string();
  AudioClip clip = read_wav(wav);
  const auto ann = read_annotation((fs::path(manifest.root) / *entry.label_path).string());
  train::TrainItem item;
  item.id = entry.clip_id();
  item.wav_path = wav;
  item.labels = encode_labels(ann, task_spec(manifest.task), clip.duration_s());
  item.augmented = augmented;
  return item;
}

inline std::vector<train::TrainItem> load_labeled_set(const CorpusManifest& manifest, Split split,
                                                      bool augmented = false) {
  std::vector<train::TrainItem> out;
  for (const auto& e : manifest.labeled(split)) out.push_back(load_labeled_item(manifest, e, augmented));
  return out;
}

// ----------------------------------------------------------------------------
// Soft pseudo-labels. A pure function of (teacher parameters, clip): label
// files are cached under "<clip id>_<teacher hash>.nsmt" and reused
// byte-identically. No confidence filtering; the full distribution is kept.

inline uint64_t model_param_hash(const model::Model& m) {
  uint64_t h = m.config.hash();
  for (const auto& arr : m.params) {
    h ^= fnv1a(arr.name);
    h = h * 0x100000001b3ULL;
    h ^= fnv1a_bytes(arr.data.data(), arr.data.size() * sizeof(float));
  }
  return h;
}

inline std::string pseudo_label_path(const std::string& cache_dir, const std::string& clip_id,
                                     uint64_t teacher_hash) {
  return cache_dir + "/" + clip_id + "_" + hex64(teacher_hash) + ".nsmt";
}

inline FrameLabelSequence pseudo_label_clip(model::Model& teacher, const AudioClip& clip) {
  return evaluate::predict_windowed(teacher, clip);
}

inline std::vector<train::TrainItem> pseudo_label(model::Model& teacher, const CorpusManifest& manifest,
                                                  Tier tier, const std::string& cache_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(cache_dir, ec);
  const uint64_t teacher_hash = model_param_hash(teacher);
  const TaskSpec spec = task_spec(manifest.task);
  const auto entries = manifest.unlabeled(tier);

  std::vector<train::TrainItem> items(entries.size());
  std::vector<char> ok(entries.size(), 0);
  const int threads = env_thread_cap();

  parallel_for(int64_t(entries.size()), threads, [&](int64_t i) {
    const auto& e = entries[size_t(i)];
    const std::string wav = (fs::path(manifest.root) / e.clip_path).string();
    const std::string cache = pseudo_label_path(cache_dir, e.clip_id(), teacher_hash);

    FrameLabelSequence fls;
    fls.spec = spec;
    fls.kind = LabelKind::Soft;
    if (fs::exists(cache)) {
      const auto arrays = engine::load_arrays(cache);
      fls.frames = arrays.at(0).shape.at(0);
      fls.probs = arrays.at(0).data;
      if (arrays.size() > 1) fls.boundary = arrays.at(1).data;
    } else {
      AudioClip clip = read_wav(wav);
      clip.id = e.clip_id();
      const int64_t grid = int64_t(spec.spectro_hop_samples) * spec.pool_t;
      if (int64_t(clip.samples.size()) < grid) {
        std::fprintf(stderr, "[pseudo] skipping %s: shorter than one model frame\n", e.clip_path.c_str());
        return;
      }
      fls = pseudo_label_clip(teacher, clip);
      std::vector<engine::NamedArray> arrays;
      arrays.push_back({"probs", {fls.frames, spec.num_classes}, fls.probs});
      if (!fls.boundary.empty()) arrays.push_back({"boundary", {fls.frames, 1}, fls.boundary});
      save_arrays(cache, arrays);
    }
    train::TrainItem item;
    item.id = e.clip_id();
    item.wav_path = wav;
    item.labels = std::move(fls);
    item.augmented = true;  // the noisy-student side of the mix
    items[size_t(i)] = std::move(item);
    ok[size_t(i)] = 1;
  });

  std::vector<train::TrainItem> out;
  for (size_t i = 0; i < items.size(); ++i) {
    if (ok[i]) out.push_back(std::move(items[i]));
  }
  return out;
}

// Mixed training set: supervised plus pseudo-labeled, drawn uniformly by the
// trainer's per-clip sampler. Labeled clips only carry augmentation when the
// plan says so.
inline std::vector<train::TrainItem> mix(const std::vector<train::TrainItem>& labeled,
                                         const std::vector<train::TrainItem>& pseudo) {
  if (labeled.empty() || pseudo.empty()) throw ParamError("mix: both sets must be non-empty");
  std::vector<train::TrainItem> out = labeled;
  out.insert(out.end(), pseudo.begin(), pseudo.end());
  return out;
}

// ----------------------------------------------------------------------------
// Teacher training and the full round loop.

inline train::MetricFn make_val_metric(const CorpusManifest& manifest) {
  return [&manifest](model::Model& m) {
    return evaluate::evaluate_split(m, manifest, Split::Val).score;
  };
}

inline train::FitResult train_teacher(const CorpusManifest& manifest, const model::ModelConfig& config,
                                      const train::TrainConfig& tc) {
  auto labeled = load_labeled_set(manifest, Split::Train);
  if (labeled.empty()) throw ParamError("train_teacher: no labeled training clips");
  model::Model init = model::build(config, tc.seed);
  augment::AugmentPolicy no_policy;  // teacher trains on clean audio
  return train::fit(std::move(init), labeled, no_policy, make_val_metric(manifest), tc);
}

inline report::RoundReport run_rounds(const RoundPlan& plan, const CorpusManifest& manifest,
                                      const train::TrainConfig& base_tc, const std::string& run_dir) {
  namespace fs = std::filesystem;
  if (plan.rounds.empty()) throw ParamError("run_rounds: empty plan");
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  const std::string cache_dir = run_dir + "/pseudo";

  train::TrainConfig tc = base_tc;
  tc.chunk_s = train::task_chunk_s(plan.task);
  tc.seed = plan.seed;

  report::RoundReport rep;
  rep.task = plan.task;

  // step 1: supervised teacher at the round-1 architecture
  auto teacher_fit = train_teacher(manifest, plan.rounds.front().config, tc);
  train::write_history_csv(run_dir + "/teacher_history.csv", teacher_fit.history);
  model::save_checkpoint(teacher_fit.best, run_dir + "/teacher.nsmt");
  rep.teacher_val = teacher_fit.best_metric;
  rep.teacher_test = evaluate::evaluate_split(teacher_fit.best, manifest, Split::Test).score;

  model::Model teacher = teacher_fit.best;
  double teacher_val = teacher_fit.best_metric;

  const auto labeled = load_labeled_set(manifest, Split::Train, plan.augment_labeled);

  for (size_t r = 0; r < plan.rounds.size(); ++r) {
    const auto& rs = plan.rounds[r];
    const int round_no = int(r) + 1;

    model::Model best_student;
    double best_student_val = -1.0;
    bool have_student = false;

    for (int tier_no = 1; tier_no <= 3; ++tier_no) {
      const Tier tier = tier_no == 1 ? Tier::U1 : (tier_no == 2 ? Tier::U2 : Tier::U3);
      // steps 2-3: pseudo-label the tier with the current teacher, mix
      auto pseudo = pseudo_label(teacher, manifest, tier, cache_dir);
      if (pseudo.empty()) throw ParamError("run_rounds: unlabeled tier is empty");
      auto train_set = mix(labeled, pseudo);

      // step 4: train a student of this round's size
      train::TrainConfig stc = tc;
      stc.seed = RngStream(plan.seed).fork(uint64_t(round_no) * 16 + uint64_t(tier_no)).next_u64();
      model::Model init = model::build(rs.config, stc.seed);
      if (plan.warm_start_students) model::warm_start(init, teacher);
      augment::AugmentPolicy policy = rs.policy;
      policy.seed = stc.seed;
      auto fit = train::fit(std::move(init), train_set, policy, make_val_metric(manifest), stc);

      char name[64];
      std::snprintf(name, sizeof(name), "round%d_u%d", round_no, tier_no);
      train::write_history_csv(run_dir + "/" + name + "_history.csv", fit.history);
      model::save_checkpoint(fit.best, run_dir + "/" + name + ".nsmt");

      report::GridCell cell;
      cell.round = round_no;
      cell.tier = tier_no;
      cell.val_metric = fit.best_metric;
      cell.test_metric = evaluate::evaluate_split(fit.best, manifest, Split::Test).score;
      rep.cells.push_back(cell);

      if (fit.best_metric > best_student_val) {
        best_student_val = fit.best_metric;
        best_student = fit.best;
        have_student = true;
      }
    }

    // promotion: the round's best student replaces the teacher only if it
    // strictly beats it on validation
    if (have_student && best_student_val > teacher_val) {
      teacher = best_student;
      teacher_val = best_student_val;
    }
  }

  report::write_report_csv(rep, run_dir + "/report.csv");
  report::write_report_svg(rep, run_dir + "/report.svg");
  return rep;
}

}  // namespace nsmir::semisup
