// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mate/json_util.hpp"
#include "mate/pipeline.hpp"
#include "mate/synth.hpp"

namespace mate::cli {

inline constexpr int kConfigVersion = 1;

struct SynthConfig {
  SynthSpec spec;
  std::string out;
};

/// Scores a checkpoint on held-out data in both directions: projected
/// queries against the gallery and the gallery against projected queries.
struct EvaluateConfig {
  std::string checkpoint;  // empty: score raw embeddings (dims must match)
  std::string queries;     // VLM-side embeddings
  std::string gallery;     // LLM-side embeddings
  std::string positives;   // manifest: query id -> gallery id(s)
  std::vector<std::size_t> ks{1, 5, 10};
  std::string metric = "recall";
  std::string query_label = "image";
  std::string gallery_label = "text";
  std::string out;
};

struct AlignConfig {
  std::string space_a;
  std::string space_b;
  std::size_t k = 10;
  std::string checkpoint;  // optional projection applied to space_a
  std::string label = "alignment";
  std::string out;
};

/// The whole run configuration document. Every section is optional; each
/// command reads its own.
struct RunConfig {
  int version = kConfigVersion;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::optional<SynthConfig> synthetic;
  std::map<Stage, StageConfig> stages;
  std::optional<EvaluateConfig> evaluate;
  std::optional<AlignConfig> align;
  Json raw;
};

/// Strict parse: missing/invalid version, unknown keys and wrong types are errors.
RunConfig parse_run_config(const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);

Json to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const Json& j, std::uint64_t default_seed);

/// Root for relative config paths: $MATE_DATA_DIR when set, else the working directory.
std::filesystem::path data_root();
std::filesystem::path resolve_path(const std::string& path);

}  // namespace mate::cli
