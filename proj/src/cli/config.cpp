// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "mate/cli/config.hpp"

#include <cstdlib>
#include <fstream>

namespace mate::cli {

namespace {

StageConfig parse_stage_section(const std::string& key, Json section, std::uint64_t default_seed) {
  const Stage stage = parse_stage(key);
  if (!section.is_object()) throw Error("stages." + key + ": expected a JSON object");
  if (section.contains("stage") && section["stage"] != key) {
    throw Error("stages." + key + ": 'stage' field disagrees with its key");
  }
  section["stage"] = key;
  if (!section.contains("seed")) section["seed"] = default_seed;
  try {
    auto cfg = stage_config_from_json(section);
    if (cfg.stage != stage) throw Error("stages." + key + ": stage mismatch");
    return cfg;
  } catch (const Error& e) {
    throw Error("stages." + key + ": " + e.what());
  }
}

EvaluateConfig parse_evaluate(const Json& j) {
  constexpr std::string_view ctx = "evaluate";
  require_keys(j, {"checkpoint", "queries", "gallery", "positives", "ks", "metric", "query_label", "gallery_label",
                   "out"},
               ctx);
  EvaluateConfig e;
  read_field(j, "checkpoint", e.checkpoint, ctx);
  read_field(j, "queries", e.queries, ctx);
  read_field(j, "gallery", e.gallery, ctx);
  read_field(j, "positives", e.positives, ctx);
  read_field(j, "ks", e.ks, ctx);
  read_field(j, "metric", e.metric, ctx);
  read_field(j, "query_label", e.query_label, ctx);
  read_field(j, "gallery_label", e.gallery_label, ctx);
  read_field(j, "out", e.out, ctx);
  if (e.metric != "recall" && e.metric != "map") throw Error("evaluate: metric must be 'recall' or 'map'");
  return e;
}

AlignConfig parse_align(const Json& j) {
  constexpr std::string_view ctx = "align";
  require_keys(j, {"space_a", "space_b", "k", "checkpoint", "label", "out"}, ctx);
  AlignConfig a;
  read_field(j, "space_a", a.space_a, ctx);
  read_field(j, "space_b", a.space_b, ctx);
  read_field(j, "k", a.k, ctx);
  read_field(j, "checkpoint", a.checkpoint, ctx);
  read_field(j, "label", a.label, ctx);
  read_field(j, "out", a.out, ctx);
  return a;
}

}  // namespace

Json to_json(const SynthSpec& s) {
  return Json{{"n_items", s.n_items},
              {"latent_dim", s.latent_dim},
              {"k_a", s.k_a},
              {"k_b", s.k_b},
              {"map_a", std::string(to_string(s.map_a))},
              {"map_b", std::string(to_string(s.map_b))},
              {"noise_a", s.noise_a},
              {"noise_b", s.noise_b},
              {"seed", s.seed},
              {"long_text_mode", s.long_text_mode},
              {"cluster_size", s.cluster_size},
              {"cluster_spread", s.cluster_spread},
              {"test_fraction", s.test_fraction}};
}

SynthSpec synth_spec_from_json(const Json& j, std::uint64_t default_seed) {
  constexpr std::string_view ctx = "synthetic";
  require_keys(j, {"n_items", "latent_dim", "k_a", "k_b", "map_a", "map_b", "noise_a", "noise_b", "seed",
                   "long_text_mode", "cluster_size", "cluster_spread", "test_fraction", "out"},
               ctx);
  SynthSpec s;
  s.seed = default_seed;
  read_field(j, "n_items", s.n_items, ctx);
  read_field(j, "latent_dim", s.latent_dim, ctx);
  read_field(j, "k_a", s.k_a, ctx);
  read_field(j, "k_b", s.k_b, ctx);
  std::string map_a(to_string(s.map_a)), map_b(to_string(s.map_b));
  read_field(j, "map_a", map_a, ctx);
  read_field(j, "map_b", map_b, ctx);
  s.map_a = parse_map_kind(map_a);
  s.map_b = parse_map_kind(map_b);
  read_field(j, "noise_a", s.noise_a, ctx);
  read_field(j, "noise_b", s.noise_b, ctx);
  read_field(j, "seed", s.seed, ctx);
  read_field(j, "long_text_mode", s.long_text_mode, ctx);
  read_field(j, "cluster_size", s.cluster_size, ctx);
  read_field(j, "cluster_spread", s.cluster_spread, ctx);
  read_field(j, "test_fraction", s.test_fraction, ctx);
  s.validate();
  return s;
}

RunConfig parse_run_config(const Json& j) {
  require_keys(j, {"version", "seed", "threads", "synthetic", "stages", "evaluate", "align"}, "config");
  if (!j.contains("version")) throw Error("config: missing required 'version' field");
  RunConfig c;
  c.raw = j;
  read_field(j, "version", c.version, "config");
  if (c.version != kConfigVersion) {
    throw Error("config: unsupported version " + std::to_string(c.version) + " (expected " +
                std::to_string(kConfigVersion) + ")");
  }
  read_field(j, "seed", c.seed, "config");
  read_field(j, "threads", c.threads, "config");
  if (auto it = j.find("synthetic"); it != j.end()) {
    SynthConfig sc;
    sc.spec = synth_spec_from_json(*it, c.seed);
    read_field(*it, "out", sc.out, "synthetic");
    c.synthetic = sc;
  }
  if (auto it = j.find("stages"); it != j.end()) {
    require_keys(*it, {"t1", "t2", "image"}, "stages");
    for (const auto& [key, section] : it->items()) {
      c.stages.emplace(parse_stage(key), parse_stage_section(key, section, c.seed));
    }
  }
  if (auto it = j.find("evaluate"); it != j.end()) c.evaluate = parse_evaluate(*it);
  if (auto it = j.find("align"); it != j.end()) c.align = parse_align(*it);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config: " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

std::filesystem::path data_root() {
  if (const char* env = std::getenv("MATE_DATA_DIR"); env && *env) return env;
  return std::filesystem::current_path();
}

std::filesystem::path resolve_path(const std::string& path) {
  std::filesystem::path p(path);
  return p.is_absolute() ? p : data_root() / p;
}

}  // namespace mate::cli
