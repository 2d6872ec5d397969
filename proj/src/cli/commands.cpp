// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "mate/cli/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "mate/checkpoint.hpp"
#include "mate/cli/config.hpp"
#include "mate/embed_store.hpp"
#include "mate/pipeline.hpp"
#include "mate/retrieval.hpp"
#include "mate/synth.hpp"

namespace fs = std::filesystem;

namespace mate::cli {

Json to_json(const EvalReport& r) {
  return Json{{"metric", r.metric},         {"direction", r.direction},       {"ks", r.ks},
              {"scores", r.scores},         {"num_queries", r.num_queries},   {"num_excluded", r.num_excluded},
              {"notes", r.notes}};
}

EvalReport eval_report_from_json(const Json& j) {
  constexpr std::string_view ctx = "eval report";
  require_keys(j, {"metric", "direction", "ks", "scores", "num_queries", "num_excluded", "notes"}, ctx);
  EvalReport r;
  read_field(j, "metric", r.metric, ctx);
  read_field(j, "direction", r.direction, ctx);
  read_field(j, "ks", r.ks, ctx);
  read_field(j, "scores", r.scores, ctx);
  read_field(j, "num_queries", r.num_queries, ctx);
  read_field(j, "num_excluded", r.num_excluded, ctx);
  read_field(j, "notes", r.notes, ctx);
  if (r.ks.size() != r.scores.size()) throw Error("eval report: ks and scores differ in length");
  return r;
}

namespace {

struct Context {
  std::optional<RunConfig> config;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::string out_flag;
  std::ostream& out;
};

const RunConfig& require_config(const Context& ctx) {
  if (!ctx.config) throw Error("this command needs --config <path>");
  return *ctx.config;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

/// --out wins, then the section's "out", then <data root>/runs/<command>-<hash>-<timestamp>.
fs::path run_dir(const Context& ctx, const std::string& section_out, const std::string& command, const Json& basis) {
  fs::path dir;
  if (!ctx.out_flag.empty()) {
    dir = ctx.out_flag;
  } else if (!section_out.empty()) {
    dir = resolve_path(section_out);
  } else {
    dir = data_root() / "runs" / (command + "-" + fnv1a_hex(basis.dump()) + "-" + timestamp());
  }
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << j.dump(2) << "\n";
  if (!f) throw Error("failed writing " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

/// Loads each embedding file once; references stay valid for the cache lifetime.
class MatrixCache {
 public:
  const EmbeddingMatrix& get(const std::string& path) {
    const auto full = resolve_path(path).string();
    auto it = cache_.find(full);
    if (it == cache_.end()) it = cache_.emplace(full, load_embeddings(full)).first;
    return it->second;
  }

 private:
  std::map<std::string, EmbeddingMatrix> cache_;
};

// ---------------------------------------------------------------------------
// gen-synthetic

int cmd_gen_synthetic(const Context& ctx) {
  const auto& cfg = require_config(ctx);
  if (!cfg.synthetic) throw Error("config has no 'synthetic' section");
  SynthSpec spec = cfg.synthetic->spec;
  if (ctx.seed) spec.seed = *ctx.seed;
  const auto dir = run_dir(ctx, cfg.synthetic->out, "gen-synthetic", to_json(spec));
  const auto art = generate(spec, ctx.threads);

  save_embeddings(art.side_a, dir / "side_a.emb");
  save_embeddings(art.side_b, dir / "side_b.emb");
  save_embeddings(art.side_a.subset(art.test_a_rows), dir / "test_side_a.emb");
  save_embeddings(art.side_b.subset(art.test_b_rows), dir / "test_side_b.emb");
  auto with_kind = [](PairDataset ds, PairKind kind) {
    ds.kind = kind;
    return ds;
  };
  save_pairs(with_kind(art.train_pairs, PairKind::kCaptionCaption), dir / "captions.pairs");
  save_pairs(with_kind(art.train_pairs, PairKind::kQueryDocument), dir / "querydoc.pairs");
  save_pairs(art.train_pairs, dir / "images.pairs");
  save_pairs(art.test_pairs, dir / "test.pairs");
  save_pairs(art.eval_a_to_b, dir / "eval_a2b.pairs");
  save_pairs(art.eval_b_to_a, dir / "eval_b2a.pairs");

  Json result{{"command", "gen-synthetic"},
              {"spec", to_json(spec)},
              {"side_a_rows", art.side_a.rows()},
              {"side_b_rows", art.side_b.rows()},
              {"train_pairs", art.train_pairs.size()},
              {"test_pairs", art.test_pairs.size()},
              {"test_gallery_rows", art.test_b_rows.size()},
              {"files",
               {"side_a.emb", "side_b.emb", "test_side_a.emb", "test_side_b.emb", "captions.pairs", "querydoc.pairs",
                "images.pairs", "test.pairs", "eval_a2b.pairs", "eval_b2a.pairs"}}};
  write_json(dir / "synth.json", result);
  ctx.out << "gen-synthetic: " << art.side_a.rows() << " side-A rows (dim " << spec.k_a << "), "
          << art.side_b.rows() << " side-B rows (dim " << spec.k_b << ")\n"
          << "  train pairs " << art.train_pairs.size() << ", test pairs " << art.test_pairs.size()
          << (spec.long_text_mode ? " (long-text clusters)" : "") << "\n"
          << "  written to " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// ingest

EmbeddingMatrix read_tsv(const fs::path& path, const std::string& tag) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> ids;
  std::vector<float> data;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string id;
    if (!std::getline(fields, id, '\t') || id.empty()) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": expected 'id<TAB>values'");
    }
    std::vector<float> row;
    std::string token;
    while (fields >> token) {
      try {
        std::size_t used = 0;
        row.push_back(std::stof(token, &used));
        if (used != token.size()) throw std::invalid_argument(token);
      } catch (const std::exception&) {
        throw Error(path.string() + ":" + std::to_string(line_no) + ": bad number '" + token + "'");
      }
    }
    if (dim == 0) dim = row.size();
    if (row.empty() || row.size() != dim) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": row has " + std::to_string(row.size()) +
                  " values, expected " + std::to_string(dim));
    }
    ids.push_back(id);
    data.insert(data.end(), row.begin(), row.end());
  }
  if (ids.empty()) throw Error(path.string() + ": no embedding rows");
  return EmbeddingMatrix(std::move(ids), std::move(data), static_cast<std::uint32_t>(dim), tag, false);
}

struct IngestOptions {
  std::string input;
  std::string tag;
  bool no_normalize = false;
  std::string manifest;
  std::string source;
  std::string target;
};

int cmd_ingest(const Context& ctx, const IngestOptions& opt) {
  if (opt.input.empty() && opt.manifest.empty()) throw Error("ingest needs --input <tsv> or --manifest <path>");
  Json basis{{"input", opt.input}, {"manifest", opt.manifest}, {"tag", opt.tag}};
  const auto dir = run_dir(ctx, "", "ingest", basis);
  Json result{{"command", "ingest"}};
  if (!opt.input.empty()) {
    auto m = read_tsv(opt.input, opt.tag);
    if (!opt.no_normalize) m = normalize_rows(m);
    const auto dest = dir / (fs::path(opt.input).stem().string() + ".emb");
    save_embeddings(m, dest);
    result["embeddings"] = {{"output", dest.filename().string()},
                            {"rows", m.rows()},
                            {"dim", m.dim()},
                            {"normalized", m.normalized()},
                            {"source_tag", m.source_tag()}};
    ctx.out << "ingest: " << m.rows() << " rows of dim " << m.dim() << " -> " << dest.string() << "\n";
  }
  if (!opt.manifest.empty()) {
    if (opt.source.empty() || opt.target.empty()) throw Error("ingest --manifest needs --source and --target");
    const auto src = load_embeddings(opt.source);
    const auto tgt = load_embeddings(opt.target);
    const auto ds = load_pairs(opt.manifest, {src, tgt});
    result["manifest"] = {{"kind", std::string(to_string(ds.kind))},
                          {"records", ds.size()},
                          {"edges", ds.source_ids.size()}};
    ctx.out << "ingest: manifest '" << opt.manifest << "' valid, " << ds.size() << " records ("
            << to_string(ds.kind) << ")\n";
  }
  write_json(dir / "ingest.json", result);
  return 0;
}

// ---------------------------------------------------------------------------
// train

TrainingPairs load_input(MatrixCache& cache, const StageConfig& cfg, const std::string& role,
                         std::vector<PairDataset>& keep) {
  auto it = cfg.inputs.find(role);
  if (it == cfg.inputs.end()) {
    throw Error("stage " + std::string(to_string(cfg.stage)) + " needs input dataset '" + role +
                "' (stages." + std::string(to_string(cfg.stage)) + ".inputs." + role + ")");
  }
  const auto& src = cache.get(it->second.source);
  const auto& tgt = cache.get(it->second.target);
  keep.push_back(load_pairs(resolve_path(it->second.pairs), {src, tgt}));
  return make_training_pairs(src, tgt, keep.back());
}

Checkpoint load_warm_start(const StageConfig& cfg, const char* expected) {
  const std::string stage(to_string(cfg.stage));
  if (cfg.warm_start.empty()) {
    throw Error("stage " + stage + " requires a warm-start " + expected + " checkpoint: set stages." + stage +
                ".warm_start");
  }
  const auto path = resolve_path(cfg.warm_start);
  if (!fs::exists(path)) {
    throw Error("missing warm-start checkpoint for stage " + stage + ": " + path.string() + " does not exist (run " +
                expected + " first)");
  }
  return load_checkpoint(path);
}

int cmd_train(const Context& ctx, const std::string& stage_name) {
  const auto& cfg_all = require_config(ctx);
  const Stage stage = parse_stage(stage_name);
  auto it = cfg_all.stages.find(stage);
  if (it == cfg_all.stages.end()) throw Error("config has no 'stages." + stage_name + "' section");
  StageConfig cfg = it->second;
  if (ctx.seed) cfg.seed = *ctx.seed;

  MatrixCache cache;
  std::vector<PairDataset> keep;
  keep.reserve(2);
  StageResult result;
  switch (stage) {
    case Stage::kTextPretrain: {
      const auto captions = load_input(cache, cfg, "captions", keep);
      result = stage_text_pretrain(captions, cfg);
      break;
    }
    case Stage::kTextFinetune: {
      const auto warm = load_warm_start(cfg, "t1");
      const auto querydoc = load_input(cache, cfg, "querydoc", keep);
      const auto captions = load_input(cache, cfg, "captions", keep);
      result = stage_text_finetune(querydoc, captions, warm, cfg);
      break;
    }
    case Stage::kImageAdapt: {
      const auto warm = load_warm_start(cfg, "t2");
      const auto images = load_input(cache, cfg, "images", keep);
      result = stage_image_adapt(images, warm, cfg);
      break;
    }
  }

  const auto dir = run_dir(ctx, cfg.out, "train-" + stage_name, Json{{"hash", config_hash(cfg)}});
  save_checkpoint(result.checkpoint, dir / result.report.checkpoint);
  save_optimizer_state(result.optimizer, dir / "optimizer.mato");
  write_json(dir / "report.json", to_json(result.report));
  write_json(dir / "timing.json", Json{{"wall_time_seconds", result.report.wall_time_seconds}});
  write_json(dir / "stage_config.json", to_json(cfg));

  const auto& r = result.report;
  ctx.out << "train " << stage_name << ": " << r.steps << " steps over " << r.epoch_losses.size() << " epoch(s)\n"
          << "  loss " << fmt(r.initial_loss) << " (initial)";
  for (std::size_t e = 0; e < r.epoch_losses.size(); ++e) ctx.out << " -> " << fmt(r.epoch_losses[e]);
  ctx.out << "\n  config " << r.config_hash << ", checkpoint " << (dir / r.checkpoint).string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

std::string emit_curve_csv(const std::vector<EvalReport>& reports, const std::string& metric) {
  std::string csv = "direction,k," + metric + "\n";
  for (const auto& r : reports) {
    if (r.metric != metric) continue;
    for (std::size_t i = 0; i < r.ks.size(); ++i) {
      csv += r.direction + "," + std::to_string(r.ks[i]) + "," + fmt(r.scores[i], 6) + "\n";
    }
  }
  return csv;
}

int cmd_evaluate(const Context& ctx, const std::string& metric_flag, const std::vector<std::size_t>& ks_flag) {
  const auto& cfg_all = require_config(ctx);
  if (!cfg_all.evaluate) throw Error("config has no 'evaluate' section");
  EvaluateConfig cfg = *cfg_all.evaluate;
  if (!metric_flag.empty()) cfg.metric = metric_flag;
  if (!ks_flag.empty()) cfg.ks = ks_flag;
  if (cfg.queries.empty() || cfg.gallery.empty() || cfg.positives.empty()) {
    throw Error("evaluate: 'queries', 'gallery' and 'positives' are required");
  }

  const auto queries_raw = load_embeddings(resolve_path(cfg.queries));
  const auto gallery = load_embeddings(resolve_path(cfg.gallery));
  const auto pairs = load_pairs(resolve_path(cfg.positives), {queries_raw, gallery});
  EmbeddingMatrix queries = queries_raw;
  if (!cfg.checkpoint.empty()) {
    const auto ckpt = load_checkpoint(resolve_path(cfg.checkpoint));
    queries = project_embeddings(ckpt, queries_raw, queries_raw.source_tag() + "-projected");
  }

  const std::size_t kmax = *std::max_element(cfg.ks.begin(), cfg.ks.end());
  auto score = [&](const RankingResult& ranking, const Positives& pos, const std::string& direction) {
    EvalReport r = cfg.metric == "map" ? map_at_k(ranking, pos, cfg.ks) : recall_at_k(ranking, pos, cfg.ks);
    r.direction = direction;
    return r;
  };
  std::vector<EvalReport> reports;
  reports.push_back(score(topk(queries, gallery, kmax, ctx.threads),
                          positives_from_pairs(pairs, queries, gallery, false),
                          cfg.query_label + "->" + cfg.gallery_label));
  reports.push_back(score(topk(gallery, queries, kmax, ctx.threads),
                          positives_from_pairs(pairs, gallery, queries, true),
                          cfg.gallery_label + "->" + cfg.query_label));

  Json basis = cfg_all.raw.value("evaluate", Json::object());
  basis["metric"] = cfg.metric;
  basis["ks"] = cfg.ks;
  const auto dir = run_dir(ctx, cfg.out, "evaluate", basis);
  Json result{{"command", "evaluate"}, {"metric", cfg.metric}, {"ks", cfg.ks}, {"reports", Json::array()}};
  for (const auto& r : reports) result["reports"].push_back(to_json(r));
  write_json(dir / ("eval_" + cfg.metric + ".json"), result);
  write_text(dir / (cfg.metric + "_curve.csv"), emit_curve_csv(reports, cfg.metric));

  const std::string label = cfg.metric == "map" ? "mAP@" : "R@";
  for (const auto& r : reports) {
    ctx.out << "evaluate " << r.direction << " (" << r.num_queries << " queries):";
    for (std::size_t i = 0; i < r.ks.size(); ++i) ctx.out << " " << label << r.ks[i] << "=" << fmt(r.scores[i]);
    ctx.out << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// align-score

struct AlignOptions {
  std::string space_a;
  std::string space_b;
  std::optional<std::size_t> k;
  std::string checkpoint;
  std::string label;
};

int cmd_align(const Context& ctx, const AlignOptions& opt) {
  AlignConfig cfg;
  if (ctx.config && ctx.config->align) cfg = *ctx.config->align;
  if (!opt.space_a.empty()) cfg.space_a = opt.space_a;
  if (!opt.space_b.empty()) cfg.space_b = opt.space_b;
  if (opt.k) cfg.k = *opt.k;
  if (!opt.checkpoint.empty()) cfg.checkpoint = opt.checkpoint;
  if (!opt.label.empty()) cfg.label = opt.label;
  if (cfg.space_a.empty() || cfg.space_b.empty()) throw Error("align-score needs two embedding files (--a, --b)");

  EmbeddingMatrix a = load_embeddings(resolve_path(cfg.space_a));
  const EmbeddingMatrix b = load_embeddings(resolve_path(cfg.space_b));
  if (!cfg.checkpoint.empty()) {
    a = project_embeddings(load_checkpoint(resolve_path(cfg.checkpoint)), a, a.source_tag() + "-projected");
  }
  const double s = alignment_score(a, b, cfg.k, ctx.threads);
  Json basis{{"a", cfg.space_a}, {"b", cfg.space_b}, {"k", cfg.k}, {"checkpoint", cfg.checkpoint}};
  const auto dir = run_dir(ctx, cfg.out, "align-score", basis);
  write_json(dir / "align.json",
             Json{{"command", "align-score"}, {"label", cfg.label}, {"k", cfg.k}, {"n", a.rows()}, {"score", s}});
  ctx.out << "align-score " << cfg.label << ": mutual " << cfg.k << "-NN overlap " << fmt(s) << " over "
          << a.rows() << " items\n";
  return 0;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const Context& ctx, const std::vector<std::string>& inputs) {
  if (inputs.empty()) throw Error("report needs at least one --input result file");
  std::vector<EvalReport> evals;
  std::string alignment = "label,k,score\n";
  std::size_t n_align = 0;
  for (const auto& path : inputs) {
    std::ifstream in(resolve_path(path));
    if (!in) throw Error("cannot open " + path);
    Json j;
    try {
      j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(path + " is not valid JSON: " + e.what());
    }
    const std::string command = j.value("command", "");
    if (command == "evaluate") {
      for (const auto& r : j.at("reports")) evals.push_back(eval_report_from_json(r));
    } else if (command == "align-score") {
      alignment += j.at("label").get<std::string>() + "," + std::to_string(j.at("k").get<std::size_t>()) + "," +
                   fmt(j.at("score").get<double>(), 6) + "\n";
      ++n_align;
    } else {
      throw Error(path + ": not an evaluate or align-score result");
    }
  }
  Json basis{{"inputs", inputs}};
  const auto dir = run_dir(ctx, "", "report", basis);
  write_text(dir / "recall_curve.csv", emit_curve_csv(evals, "recall"));
  write_text(dir / "map_curve.csv", emit_curve_csv(evals, "map"));
  write_text(dir / "alignment.csv", alignment);
  write_json(dir / "report.json", Json{{"command", "report"},
                                       {"eval_reports", evals.size()},
                                       {"alignment_scores", n_align},
                                       {"files", {"recall_curve.csv", "map_curve.csv", "alignment.csv"}}});
  ctx.out << "report: " << evals.size() << " eval curves, " << n_align << " alignment scores -> " << dir.string()
          << "\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"mate: multi-stage alignment of VLM embeddings into an LLM embedding space"};
  app.name("mate");
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::string out_dir;
  app.add_option("--config", config_path, "Run configuration (JSON)");
  app.add_option("--seed", seed, "Override the configured seed");
  app.add_option("--threads", threads, "Worker threads (1 = bitwise deterministic)")->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "Output directory for this run");

  auto* gen = app.add_subcommand("gen-synthetic", "Generate paired synthetic embedding spaces");

  IngestOptions ingest_opt;
  auto* ingest = app.add_subcommand("ingest", "Convert TSV embeddings or validate a pair manifest");
  ingest->add_option("--input", ingest_opt.input, "TSV file: id<TAB>v1 v2 ...");
  ingest->add_option("--tag", ingest_opt.tag, "Source tag stored with the embeddings");
  ingest->add_flag("--no-normalize", ingest_opt.no_normalize, "Keep rows as given");
  ingest->add_option("--manifest", ingest_opt.manifest, "Pair manifest to validate");
  ingest->add_option("--source", ingest_opt.source, "Embeddings named by the manifest's first column");
  ingest->add_option("--target", ingest_opt.target, "Embeddings named by the manifest's second column");

  std::string stage;
  auto* train = app.add_subcommand("train", "Run one training stage");
  train->add_option("--stage", stage, "t1 | t2 | image")->required()->check(CLI::IsMember({"t1", "t2", "image"}));

  std::string metric;
  std::vector<std::size_t> ks;
  auto* evaluate = app.add_subcommand("evaluate", "Cross-space retrieval metrics in both directions");
  evaluate->add_option("--metric", metric, "recall | map")->check(CLI::IsMember({"recall", "map"}));
  evaluate->add_option("--k", ks, "Comma-separated K values")->delimiter(',')->check(CLI::PositiveNumber);

  AlignOptions align_opt;
  auto* align = app.add_subcommand("align-score", "Mutual k-NN alignment between two spaces");
  align->add_option("--a", align_opt.space_a, "First embedding file");
  align->add_option("--b", align_opt.space_b, "Second embedding file (row- or id-aligned)");
  align->add_option("--k", align_opt.k, "Neighbourhood size")->check(CLI::PositiveNumber);
  align->add_option("--checkpoint", align_opt.checkpoint, "Project space A through this checkpoint first");
  align->add_option("--label", align_opt.label, "Label used in reports");

  std::vector<std::string> report_inputs;
  auto* report = app.add_subcommand("report", "Turn evaluate/align-score results into CSV curves");
  report->add_option("--input", report_inputs, "Result JSON files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "mate: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    Context ctx{std::nullopt, config_path, seed, 1, out_dir, out};
    if (!config_path.empty()) {
      ctx.config = load_run_config(config_path);
      ctx.threads = std::max(1u, ctx.config->threads);
    }
    if (threads) ctx.threads = *threads;
    if (gen->parsed()) return cmd_gen_synthetic(ctx);
    if (ingest->parsed()) return cmd_ingest(ctx, ingest_opt);
    if (train->parsed()) return cmd_train(ctx, stage);
    if (evaluate->parsed()) return cmd_evaluate(ctx, metric, ks);
    if (align->parsed()) return cmd_align(ctx, align_opt);
    if (report->parsed()) return cmd_report(ctx, report_inputs);
  } catch (const std::exception& e) {
    err << "mate: error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace mate::cli
