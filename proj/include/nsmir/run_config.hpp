// nsmir/run_config.hpp
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

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "nsmir/augment.hpp"
#include "nsmir/common.hpp"
#include "nsmir/manifest.hpp"
#include "nsmir/semisup.hpp"
#include "nsmir/tasks.hpp"
#include "nsmir/train.hpp"

namespace nsmir::cli {

// Flat key-path config file: one "key = value" per line, '#' comments.
// Unknown keys are rejected; every run archives its resolved copy.
struct RunConfig {
  Task task = Task::Downbeat;
  double scale = 0.1;
  uint64_t seed = 7;
  std::string corpus_dir = "data/corpus";
  std::string out_dir = "runs/run";
  TierSizes sizes;
  train::TrainConfig train;
  double a2_probability = 0.8;
  int pitch_range = 3;
  double mask_fraction_max = 0.25;
  int temporal_depth = 0;  // 0 = round preset
  bool warm_start = false;
  bool augment_labeled = false;

  semisup::RoundPlan plan() const {
    auto p = semisup::default_plan(task, scale, seed, temporal_depth);
    p.warm_start_students = warm_start;
    p.augment_labeled = augment_labeled;
    for (auto& r : p.rounds) {
      r.policy.a2_probability = a2_probability;
      r.policy.pitch_range_semitones = pitch_range;
      r.policy.mask_fraction_max = mask_fraction_max;
    }
    return p;
  }

  train::TrainConfig train_config() const {
    train::TrainConfig tc = train;
    tc.seed = seed;
    tc.chunk_s = train::task_chunk_s(task);
    return tc;
  }

  std::string resolved_text() const {
    std::ostringstream s;
    s << "task = " << task_name(task) << "\n";
    s << "scale = " << fmt_g(scale) << "\n";
    s << "seed = " << seed << "\n";
    s << "corpus.dir = " << corpus_dir << "\n";
    s << "out.dir = " << out_dir << "\n";
    s << "corpus.labeled = " << sizes.n_labeled << "\n";
    s << "corpus.u1 = " << sizes.n_u1 << "\n";
    s << "corpus.u2 = " << sizes.n_u2 << "\n";
    s << "corpus.u3 = " << sizes.n_u3 << "\n";
    s << "corpus.val = " << sizes.n_val << "\n";
    s << "corpus.test = " << sizes.n_test << "\n";
    s << "train.lr = " << fmt_g(train.lr) << "\n";
    s << "train.lr_decay = " << fmt_g(train.lr_decay) << "\n";
    s << "train.lr_patience = " << train.lr_patience << "\n";
    s << "train.early_stop_patience = " << train.early_stop_patience << "\n";
    s << "train.batches_per_epoch = " << train.batches_per_epoch << "\n";
    s << "train.batch_size = " << train.batch_size << "\n";
    s << "train.max_epochs = " << train.max_epochs << "\n";
    s << "train.literal_weight_decay = " << (train.literal_weight_decay ? "true" : "false") << "\n";
    s << "model.temporal_depth = " << temporal_depth << "\n";
    s << "augment.a2_probability = " << fmt_g(a2_probability) << "\n";
    s << "augment.pitch_range = " << pitch_range << "\n";
    s << "augment.mask_fraction_max = " << fmt_g(mask_fraction_max) << "\n";
    s << "semisup.warm_start = " << (warm_start ? "true" : "false") << "\n";
    s << "semisup.augment_labeled = " << (augment_labeled ? "true" : "false") << "\n";
    return s.str();
  }
};

namespace detail {

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParamError("bad boolean value: " + v);
}

}  // namespace detail

inline RunConfig parse_run_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParamError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));

    if (key == "task") cfg.task = task_from_name(val);
    else if (key == "scale") cfg.scale = std::stod(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "corpus.dir") cfg.corpus_dir = val;
    else if (key == "out.dir") cfg.out_dir = val;
    else if (key == "corpus.labeled") cfg.sizes.n_labeled = std::stoi(val);
    else if (key == "corpus.u1") cfg.sizes.n_u1 = std::stoi(val);
    else if (key == "corpus.u2") cfg.sizes.n_u2 = std::stoi(val);
    else if (key == "corpus.u3") cfg.sizes.n_u3 = std::stoi(val);
    else if (key == "corpus.val") cfg.sizes.n_val = std::stoi(val);
    else if (key == "corpus.test") cfg.sizes.n_test = std::stoi(val);
    else if (key == "train.lr") cfg.train.lr = std::stof(val);
    else if (key == "train.lr_decay") cfg.train.lr_decay = std::stod(val);
    else if (key == "train.lr_patience") cfg.train.lr_patience = std::stoi(val);
    else if (key == "train.early_stop_patience") cfg.train.early_stop_patience = std::stoi(val);
    else if (key == "train.batches_per_epoch") cfg.train.batches_per_epoch = std::stoi(val);
    else if (key == "train.batch_size") cfg.train.batch_size = std::stoi(val);
    else if (key == "train.max_epochs") cfg.train.max_epochs = std::stoi(val);
    else if (key == "train.literal_weight_decay") cfg.train.literal_weight_decay = detail::parse_bool(val);
    else if (key == "model.temporal_depth") cfg.temporal_depth = std::stoi(val);
    else if (key == "augment.a2_probability") cfg.a2_probability = std::stod(val);
    else if (key == "augment.pitch_range") cfg.pitch_range = std::stoi(val);
    else if (key == "augment.mask_fraction_max") cfg.mask_fraction_max = std::stod(val);
    else if (key == "semisup.warm_start") cfg.warm_start = detail::parse_bool(val);
    else if (key == "semisup.augment_labeled") cfg.augment_labeled = detail::parse_bool(val);
    else throw ParamError("unknown config key: " + key);
  }
  if (cfg.scale <= 0.0 || cfg.scale > 1.0) throw ParamError("scale must be in (0, 1]");
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_run_config_text(buf.str());
}

// Exclusive advisory lock on a run directory (presence-based).
class RunLock {
 public:
  explicit RunLock(const std::string& dir) : path_(dir + "/.lock") {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (std::filesystem::exists(path_)) throw IoError("run directory is locked: " + path_);
    std::ofstream f(path_);
    f << "locked\n";
  }
  ~RunLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::string path_;
};

}  // namespace nsmir::cli
