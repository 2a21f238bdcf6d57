// nsmir/manifest.hpp
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
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "nsmir/common.hpp"
#include "nsmir/synth.hpp"

namespace nsmir {

enum class Split { Train, Val, Test };
enum class Tier { Labeled, U1, U2, U3 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split split_from_name(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ParamError("unknown split: " + s);
}

inline const char* tier_name(Tier t) {
  switch (t) {
    case Tier::Labeled: return "labeled";
    case Tier::U1: return "u1";
    case Tier::U2: return "u2";
    case Tier::U3: return "u3";
  }
  return "?";
}

inline Tier tier_from_name(const std::string& s) {
  if (s == "labeled") return Tier::Labeled;
  if (s == "u1") return Tier::U1;
  if (s == "u2") return Tier::U2;
  if (s == "u3") return Tier::U3;
  throw ParamError("unknown tier: " + s);
}

struct ManifestEntry {
  std::string clip_path;                // relative to the manifest root
  std::optional<std::string> label_path;
  Split split = Split::Train;
  Tier tier = Tier::Labeled;            // smallest tier an unlabeled clip belongs to

  std::string clip_id() const {
    const auto slash = clip_path.find_last_of('/');
    std::string base = slash == std::string::npos ? clip_path : clip_path.substr(slash + 1);
    const auto dot = base.find_last_of('.');
    return dot == std::string::npos ? base : base.substr(0, dot);
  }
};

struct CorpusManifest {
  std::string root;
  Task task = Task::Downbeat;
  uint64_t seed = 0;
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> labeled(Split split) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries) {
      if (e.tier == Tier::Labeled && e.split == split) out.push_back(e);
    }
    return out;
  }

  // An unlabeled tier is nested by construction: U1 entries are part of U2
  // and U3, U2 entries part of U3.
  std::vector<ManifestEntry> unlabeled(Tier tier) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries) {
      if (e.tier == Tier::Labeled) continue;
      if (int(e.tier) <= int(tier)) out.push_back(e);
    }
    return out;
  }

  void validate() const {
    std::set<std::string> seen;
    for (const auto& e : entries) {
      if (!seen.insert(e.clip_path).second) throw ParamError("duplicate clip path: " + e.clip_path);
      if (e.tier == Tier::Labeled && !e.label_path) throw ParamError("labeled entry missing label: " + e.clip_path);
      if (e.tier != Tier::Labeled && e.label_path) throw ParamError("unlabeled entry has a label: " + e.clip_path);
    }
  }
};

// ----------------------------------------------------------------------------
// Manifest file: JSON lines with one header line {version, task, seed}.

inline void save_manifest(const CorpusManifest& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  nlohmann::json header;
  header["version"] = 1;
  header["task"] = task_name(m.task);
  header["seed"] = m.seed;
  f << header.dump() << "\n";
  for (const auto& e : m.entries) {
    nlohmann::json j;
    j["clip"] = e.clip_path;
    if (e.label_path) j["label"] = *e.label_path;
    else j["label"] = nullptr;
    j["split"] = split_name(e.split);
    j["tier"] = tier_name(e.tier);
    f << j.dump() << "\n";
  }
  if (!f) throw IoError("write failed: " + path);
}

inline CorpusManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  CorpusManifest m;
  m.root = std::filesystem::path(path).parent_path().string();
  std::string line;
  if (!std::getline(f, line)) throw IoError("empty manifest: " + path);
  auto header = nlohmann::json::parse(line);
  if (header.at("version").get<int>() != 1) throw IoError("unsupported manifest version");
  m.task = task_from_name(header.at("task").get<std::string>());
  m.seed = header.at("seed").get<uint64_t>();
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    ManifestEntry e;
    e.clip_path = j.at("clip").get<std::string>();
    if (!j.at("label").is_null()) e.label_path = j.at("label").get<std::string>();
    e.split = split_from_name(j.at("split").get<std::string>());
    e.tier = tier_from_name(j.at("tier").get<std::string>());
    m.entries.push_back(e);
  }
  m.validate();
  return m;
}

// ----------------------------------------------------------------------------
// Corpus construction: synthesizes clips + labels under root and returns the
// manifest. Deterministic in seed; per-clip rng streams keyed by clip id.

struct TierSizes {
  int n_labeled = 8;
  int n_u1 = 8;
  int n_u2 = 16;
  int n_u3 = 32;
  int n_val = 8;
  int n_test = 16;
};

inline CorpusManifest build_manifest(const std::string& root, Task task, const TierSizes& sizes,
                                     uint64_t seed) {
  if (sizes.n_labeled <= 0 || sizes.n_u1 <= 0 || sizes.n_u2 <= 0 || sizes.n_u3 <= 0)
    throw ParamError("tier sizes must be positive");
  if (!(sizes.n_u1 <= sizes.n_u2 && sizes.n_u2 <= sizes.n_u3))
    throw ParamError("tier sizes must nest: u1 <= u2 <= u3");
  if (sizes.n_val <= 0 || sizes.n_test <= 0) throw ParamError("val/test sizes must be positive");

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(root) / "clips", ec);
  fs::create_directories(fs::path(root) / "labels", ec);
  if (ec) throw IoError("cannot create corpus directories under " + root);

  CorpusManifest m;
  m.root = root;
  m.task = task;
  m.seed = seed;

  RngStream master(seed);
  auto make_clip = [&](const std::string& id, Split split, Tier tier, bool write_label) {
    const uint64_t clip_seed = master.fork(fnv1a(id)).next_u64();
    auto [clip, ann] = synth::synth_clip(task, synth::SynthParams{}, clip_seed);
    clip.id = id;
    const std::string wav_rel = "clips/" + id + ".wav";
    write_wav((fs::path(root) / wav_rel).string(), clip);
    ManifestEntry e;
    e.clip_path = wav_rel;
    e.split = split;
    e.tier = tier;
    if (write_label) {
      const std::string lab_rel = "labels/" + id + ".json";
      write_annotation((fs::path(root) / lab_rel).string(), ann);
      e.label_path = lab_rel;
    }
    m.entries.push_back(e);
  };

  char buf[64];
  auto id_for = [&](const char* group, int i) {
    std::snprintf(buf, sizeof(buf), "%s_%s_%03d", task_name(task), group, i);
    return std::string(buf);
  };

  for (int i = 0; i < sizes.n_labeled; ++i) make_clip(id_for("train", i), Split::Train, Tier::Labeled, true);
  for (int i = 0; i < sizes.n_val; ++i) make_clip(id_for("val", i), Split::Val, Tier::Labeled, true);
  for (int i = 0; i < sizes.n_test; ++i) make_clip(id_for("test", i), Split::Test, Tier::Labeled, true);
  for (int i = 0; i < sizes.n_u3; ++i) {
    const Tier tier = i < sizes.n_u1 ? Tier::U1 : (i < sizes.n_u2 ? Tier::U2 : Tier::U3);
    make_clip(id_for("unlab", i), Split::Train, tier, false);
  }

  m.validate();
  save_manifest(m, (fs::path(root) / "manifest.jsonl").string());
  return m;
}

}  // namespace nsmir
