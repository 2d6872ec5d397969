// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "mate/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "mate/rng.hpp"

namespace mate {

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::kTextPretrain:
      return "t1";
    case Stage::kTextFinetune:
      return "t2";
    case Stage::kImageAdapt:
      return "image";
  }
  return "unknown";
}

Stage parse_stage(std::string_view text) {
  for (auto s : {Stage::kTextPretrain, Stage::kTextFinetune, Stage::kImageAdapt}) {
    if (to_string(s) == text) return s;
  }
  throw Error("unknown stage '" + std::string(text) + "' (expected t1, t2 or image)");
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

/// Position `p` of an endless stream of per-cycle shuffles of [0, n).
class CyclingOrder {
 public:
  CyclingOrder(std::size_t n, std::uint64_t seed, std::uint64_t epoch, std::uint64_t source)
      : n_(n), seed_(seed), epoch_(epoch), source_(source) {}

  std::size_t at(std::size_t p) {
    const std::size_t cycle = p / n_;
    if (cycle != cycle_ || perm_.empty()) {
      cycle_ = cycle;
      perm_ = shuffled(n_, derive_seed(seed_, {epoch_, source_, cycle}));
    }
    return perm_[p % n_];
  }

 private:
  std::size_t n_;
  std::uint64_t seed_, epoch_, source_;
  std::size_t cycle_ = 0;
  std::vector<std::size_t> perm_;
};

}  // namespace

BatchPlan make_batches(std::span<const std::size_t> source_sizes, std::size_t batch_size, std::uint64_t seed,
                       std::uint64_t epoch, Mixing mixing, bool recycle_smaller) {
  if (batch_size == 0) throw Error("batch_size must be >= 1");
  BatchPlan plan;
  if (mixing == Mixing::kNone) {
    if (source_sizes.size() != 1) throw Error("mixing 'none' takes exactly one source");
    const std::size_t n = source_sizes[0];
    CyclingOrder order(std::max<std::size_t>(n, 1), seed, epoch, 0);
    const std::size_t n_batches = n / batch_size;
    plan.batches.resize(n_batches);
    for (std::size_t b = 0; b < n_batches; ++b) {
      for (std::size_t i = 0; i < batch_size; ++i) plan.batches[b].push_back({0, order.at(b * batch_size + i)});
    }
    plan.consumed = {n_batches * batch_size};
    plan.unused = {n - n_batches * batch_size};
    return plan;
  }

  if (source_sizes.size() != 2) throw Error("equal mixing takes exactly two sources");
  if (batch_size % 2 != 0) throw Error("equal mixing requires an even batch_size, got " + std::to_string(batch_size));
  const std::size_t half = batch_size / 2;
  const std::size_t n0 = source_sizes[0];
  const std::size_t n1 = source_sizes[1];
  if (n0 == 0 || n1 == 0) throw Error("equal mixing requires both sources to be non-empty");
  const std::size_t limit = recycle_smaller ? std::max(n0, n1) : std::min(n0, n1);
  const std::size_t n_batches = limit / half;
  CyclingOrder order0(n0, seed, epoch, 0);
  CyclingOrder order1(n1, seed, epoch, 1);
  plan.batches.resize(n_batches);
  for (std::size_t b = 0; b < n_batches; ++b) {
    auto& batch = plan.batches[b];
    batch.reserve(batch_size);
    for (std::size_t i = 0; i < half; ++i) {
      batch.push_back({0, order0.at(b * half + i)});
      batch.push_back({1, order1.at(b * half + i)});
    }
  }
  const std::size_t used = n_batches * half;
  plan.consumed = {used, used};
  plan.unused = {n0 - std::min(used, n0), n1 - std::min(used, n1)};
  return plan;
}

void StageConfig::validate() const {
  if (epochs == 0) throw Error("epochs must be >= 1");
  if (batch_size == 0) throw Error("batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw Error("lr must be a finite value >= 0");
  if (!(weight_decay >= 0.0)) throw Error("weight_decay must be >= 0");
  if (!(temperature > 0.0)) throw Error("temperature must be > 0");
  if (stage == Stage::kTextFinetune && batch_size % 2 != 0) {
    throw Error("stage t2 requires an even batch_size, got " + std::to_string(batch_size));
  }
  if (lora) lora->validate();
}

StageConfig default_stage_config(Stage stage) {
  StageConfig c;
  c.stage = stage;
  switch (stage) {
    case Stage::kTextPretrain:
      c.epochs = 1;
      c.lr = 1e-3;
      break;
    case Stage::kTextFinetune:
      c.epochs = 3;
      c.lr = 1e-3;
      break;
    case Stage::kImageAdapt:
      c.epochs = 3;
      c.lr = 3e-4;
      c.lora = LoraConfig{};
      break;
  }
  return c;
}

Json to_json(const StageConfig& cfg) {
  Json j;
  j["stage"] = std::string(to_string(cfg.stage));
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["weight_decay"] = cfg.weight_decay;
  j["temperature"] = cfg.temperature;
  j["reduction"] = cfg.reduction == Reduction::kMean ? "mean" : "sum";
  j["seed"] = cfg.seed;
  Json inputs = Json::object();
  for (const auto& [role, ref] : cfg.inputs) {
    inputs[role] = {{"source", ref.source}, {"target", ref.target}, {"pairs", ref.pairs}};
  }
  j["inputs"] = inputs;
  j["warm_start"] = cfg.warm_start;
  j["out"] = cfg.out;
  if (cfg.lora) {
    j["lora"] = {{"rank", cfg.lora->rank},
                 {"alpha", cfg.lora->alpha},
                 {"dropout", cfg.lora->dropout},
                 {"encoder_stub", cfg.lora->encoder_stub}};
  }
  j["recycle_smaller"] = cfg.recycle_smaller;
  j["model"] = {{"output_normalize", cfg.model.output_normalize}, {"final_activation", cfg.model.final_activation}};
  return j;
}

StageConfig stage_config_from_json(const Json& j) {
  constexpr std::string_view ctx = "stage config";
  require_keys(j, {"stage", "epochs", "batch_size", "lr", "weight_decay", "temperature", "reduction", "seed",
                   "inputs", "warm_start", "out", "lora", "recycle_smaller", "model"},
               ctx);
  if (!j.contains("stage")) throw Error("stage config: missing 'stage'");
  std::string stage_name;
  read_field(j, "stage", stage_name, ctx);
  StageConfig c = default_stage_config(parse_stage(stage_name));
  read_field(j, "epochs", c.epochs, ctx);
  read_field(j, "batch_size", c.batch_size, ctx);
  read_field(j, "lr", c.lr, ctx);
  read_field(j, "weight_decay", c.weight_decay, ctx);
  read_field(j, "temperature", c.temperature, ctx);
  std::string reduction = "mean";
  read_field(j, "reduction", reduction, ctx);
  if (reduction == "mean") {
    c.reduction = Reduction::kMean;
  } else if (reduction == "sum") {
    c.reduction = Reduction::kSum;
  } else {
    throw Error("stage config: reduction must be 'mean' or 'sum'");
  }
  read_field(j, "seed", c.seed, ctx);
  if (auto it = j.find("inputs"); it != j.end()) {
    if (!it->is_object()) throw Error("stage config: 'inputs' must be an object");
    for (const auto& [role, ref] : it->items()) {
      const std::string rctx = "stage config input '" + role + "'";
      if (role != "captions" && role != "querydoc" && role != "images") {
        throw Error("stage config: unknown input role '" + role + "'");
      }
      require_keys(ref, {"source", "target", "pairs"}, rctx);
      DatasetRef d;
      read_field(ref, "source", d.source, rctx);
      read_field(ref, "target", d.target, rctx);
      read_field(ref, "pairs", d.pairs, rctx);
      if (d.source.empty() || d.target.empty() || d.pairs.empty()) {
        throw Error(rctx + ": 'source', 'target' and 'pairs' are all required");
      }
      c.inputs[role] = d;
    }
  }
  read_field(j, "warm_start", c.warm_start, ctx);
  read_field(j, "out", c.out, ctx);
  if (auto it = j.find("lora"); it != j.end() && !it->is_null()) {
    require_keys(*it, {"rank", "alpha", "dropout", "encoder_stub"}, "stage config lora");
    LoraConfig l;
    read_field(*it, "rank", l.rank, "stage config lora");
    read_field(*it, "alpha", l.alpha, "stage config lora");
    read_field(*it, "dropout", l.dropout, "stage config lora");
    read_field(*it, "encoder_stub", l.encoder_stub, "stage config lora");
    c.lora = l;
  }
  read_field(j, "recycle_smaller", c.recycle_smaller, ctx);
  if (auto it = j.find("model"); it != j.end()) {
    require_keys(*it, {"output_normalize", "final_activation"}, "stage config model");
    read_field(*it, "output_normalize", c.model.output_normalize, "stage config model");
    read_field(*it, "final_activation", c.model.final_activation, "stage config model");
  }
  c.validate();
  return c;
}

std::string config_hash(const StageConfig& cfg) {
  Json j = to_json(cfg);
  j.erase("out");
  return fnv1a_hex(j.dump());
}

Json to_json(const TrainReport& report, bool include_timing) {
  Json j;
  j["stage"] = std::string(to_string(report.stage));
  j["initial_loss"] = report.initial_loss;
  j["epoch_losses"] = report.epoch_losses;
  j["batches_per_epoch"] = report.batches_per_epoch;
  j["unused_pairs_per_epoch"] = report.unused_pairs_per_epoch;
  j["steps"] = report.steps;
  j["checkpoint"] = report.checkpoint;
  j["rng_lineage"] = report.rng_lineage;
  j["config_hash"] = report.config_hash;
  if (include_timing) j["wall_time_seconds"] = report.wall_time_seconds;
  return j;
}

TrainingPairs make_training_pairs(const EmbeddingMatrix& source, const EmbeddingMatrix& target,
                                  const PairDataset& pairs) {
  TrainingPairs tp;
  tp.source = &source;
  tp.target = &target;
  tp.pairs = resolve_pairs(pairs, {source, target});
  return tp;
}

namespace {

enum class Objective { kOneWay, kSymmetric };

void check_sources(const ProjectionParams& params, std::span<const TrainingPairs* const> sources) {
  for (const auto* tp : sources) {
    if (!tp->source || !tp->target) throw Error("training pairs without matrices");
    if (!tp->source->normalized() || !tp->target->normalized()) {
      throw Error("training embeddings must be normalized");
    }
    if (tp->source->dim() != params.dims.input) {
      throw Error("dimension mismatch: source embeddings have dim " + std::to_string(tp->source->dim()) +
                  ", projection expects " + std::to_string(params.dims.input));
    }
    if (tp->target->dim() != params.dims.output) {
      throw Error("dimension mismatch: target embeddings have dim " + std::to_string(tp->target->dim()) +
                  ", projection produces " + std::to_string(params.dims.output));
    }
  }
}

void gather(const Batch& batch, std::span<const TrainingPairs* const> sources, Matrix& x, Matrix& y) {
  const auto& first = *sources[0];
  x.resize(static_cast<Eigen::Index>(batch.size()), first.source->dim());
  y.resize(static_cast<Eigen::Index>(batch.size()), first.target->dim());
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto& tp = *sources[batch[r].source];
    const auto xs = tp.source->row(tp.pairs.source_rows[batch[r].index]);
    const auto ys = tp.target->row(tp.pairs.target_rows[batch[r].index]);
    for (std::size_t c = 0; c < xs.size(); ++c) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = xs[c];
    for (std::size_t c = 0; c < ys.size(); ++c) y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = ys[c];
  }
}

LossResult batch_loss(const Matrix& u, const Matrix& y, Objective objective, const LossConfig& lc) {
  return objective == Objective::kOneWay ? info_nce(u, y, lc) : symmetric_info_nce(u, y, lc);
}

/// Shared optimisation loop; trains whatever `trainable_tensors` exposes.
StageResult train(Checkpoint model, std::vector<const TrainingPairs*> sources, Mixing mixing, Objective objective,
                  const StageConfig& cfg, const BatchObserver& observer) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  check_sources(model.params, sources);

  StageResult result;
  auto& report = result.report;
  report.stage = cfg.stage;
  report.config_hash = config_hash(cfg);
  model.seed_lineage.push_back(cfg.seed);
  report.rng_lineage = model.seed_lineage;
  report.checkpoint = "checkpoint.matp";

  std::vector<std::size_t> sizes;
  for (const auto* tp : sources) sizes.push_back(tp->pairs.size());

  const LossConfig lc{cfg.temperature, cfg.reduction};
  auto& opt = result.optimizer;
  opt.hyper.lr = cfg.lr;
  opt.hyper.weight_decay = cfg.weight_decay;

  LoraAdapter* adapters = model.adapters ? &*model.adapters : nullptr;
  Matrix x, y;

  {
    const auto plan = make_batches(sizes, cfg.batch_size, cfg.seed, 0, mixing, cfg.recycle_smaller);
    if (plan.batches.empty()) {
      throw Error("stage " + std::string(to_string(cfg.stage)) + ": no full batch of size " +
                  std::to_string(cfg.batch_size) + " fits the training data");
    }
    double total = 0.0;
    for (const auto& batch : plan.batches) {
      gather(batch, sources, x, y);
      const Matrix u = project(model.params, adapters, x);
      total += batch_loss(u, y, objective, lc).loss;
    }
    report.initial_loss = total / static_cast<double>(plan.batches.size());
  }

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto plan = make_batches(sizes, cfg.batch_size, cfg.seed, epoch, mixing, cfg.recycle_smaller);
    double total = 0.0;
    for (std::size_t b = 0; b < plan.batches.size(); ++b) {
      const auto& batch = plan.batches[b];
      if (observer) observer(epoch, batch);
      gather(batch, sources, x, y);
      auto fwd = project_forward(model.params, adapters, x, Mode::kTrain,
                                 derive_seed(cfg.seed, {0xd7, epoch, b}));
      const auto loss = batch_loss(fwd.output, y, objective, lc);
      if (!std::isfinite(loss.loss)) throw Error("non-finite loss at epoch " + std::to_string(epoch));
      total += loss.loss;
      const auto grads = project_backward(model.params, adapters, fwd.cache, loss.grad_x);
      const auto params = trainable_tensors(model.params, adapters);
      const auto gviews = gradient_tensors(grads);
      adamw_step(params, gviews, opt);
      ++report.steps;
    }
    report.epoch_losses.push_back(total / static_cast<double>(plan.batches.size()));
    report.batches_per_epoch.push_back(plan.batches.size());
    report.unused_pairs_per_epoch.push_back(std::accumulate(plan.unused.begin(), plan.unused.end(), std::size_t{0}));
  }

  result.checkpoint = std::move(model);
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void require_stage(const StageConfig& cfg, Stage expected) {
  if (cfg.stage != expected) {
    throw Error("config is for stage " + std::string(to_string(cfg.stage)) + ", expected " +
                std::string(to_string(expected)));
  }
}

}  // namespace

StageResult stage_text_pretrain(const TrainingPairs& captions, const StageConfig& cfg, const BatchObserver& observer) {
  require_stage(cfg, Stage::kTextPretrain);
  if (!captions.source || !captions.target) throw Error("stage t1: caption pairs are missing");
  if (captions.pairs.size() == 0) throw Error("stage t1: caption dataset is empty");
  Checkpoint model;
  model.params =
      init_params(captions.source->dim(), captions.target->dim(), derive_seed(cfg.seed, {0x1417}), cfg.model);
  const TrainingPairs* src[] = {&captions};
  return train(std::move(model), {src[0]}, Mixing::kNone, Objective::kOneWay, cfg, observer);
}

StageResult stage_text_finetune(const TrainingPairs& querydoc, const TrainingPairs& captions,
                                const Checkpoint& warm_start, const StageConfig& cfg, const BatchObserver& observer) {
  require_stage(cfg, Stage::kTextFinetune);
  if (!querydoc.source || querydoc.pairs.size() == 0) {
    throw Error("stage t2: query-document dataset is empty (mixing requires both sources)");
  }
  if (!captions.source || captions.pairs.size() == 0) {
    throw Error("stage t2: caption dataset is empty (mixing requires both sources)");
  }
  if (warm_start.adapters) throw Error("stage t2: warm-start checkpoint must not carry adapters");
  Checkpoint model = warm_start;
  return train(std::move(model), {&querydoc, &captions}, Mixing::kEqual, Objective::kOneWay, cfg, observer);
}

StageResult stage_image_adapt(const TrainingPairs& images, const Checkpoint& warm_start, const StageConfig& cfg,
                              const BatchObserver& observer) {
  require_stage(cfg, Stage::kImageAdapt);
  if (!images.source || images.pairs.size() == 0) throw Error("stage image: image-caption dataset is empty");
  const LoraConfig lora = cfg.lora.value_or(LoraConfig{});
  lora.validate();
  Checkpoint model;
  model.params = warm_start.adapters ? merge_adapters(warm_start.params, *warm_start.adapters) : warm_start.params;
  model.params.validate();
  model.seed_lineage = warm_start.seed_lineage;
  model.adapters = make_lora_adapter(model.params, lora, derive_seed(cfg.seed, {0x10a}));
  return train(std::move(model), {&images}, Mixing::kNone, Objective::kSymmetric, cfg, observer);
}

}  // namespace mate
