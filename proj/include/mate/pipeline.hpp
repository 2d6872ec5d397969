// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mate/checkpoint.hpp"
#include "mate/embed_store.hpp"
#include "mate/json_util.hpp"
#include "mate/objective.hpp"

namespace mate {

enum class Stage { kTextPretrain, kTextFinetune, kImageAdapt };

/// "t1", "t2", "image".
std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view text);

enum class Mixing { kNone, kEqual };

struct BatchItem {
  std::uint8_t source = 0;
  std::size_t index = 0;  // row of that source's pair list
};

using Batch = std::vector<BatchItem>;

struct BatchPlan {
  std::vector<Batch> batches;
  std::vector<std::size_t> consumed;  // per source
  std::vector<std::size_t> unused;    // per source: dropped remainder or untouched tail
};

/// One epoch of batches over one source (`kNone`) or two (`kEqual`, half of
/// every batch from each). Shuffles are deterministic in (seed, epoch);
/// partial batches are dropped. With `kEqual` the epoch ends when the smaller
/// source runs out unless `recycle_smaller` reshuffles and reuses it.
BatchPlan make_batches(std::span<const std::size_t> source_sizes, std::size_t batch_size, std::uint64_t seed,
                       std::uint64_t epoch, Mixing mixing, bool recycle_smaller = false);

/// Paths of one pair dataset: source matrix, target matrix, manifest.
struct DatasetRef {
  std::string source;
  std::string target;
  std::string pairs;
};

/// Full description of one training stage. Maps one-to-one onto the run
/// configuration JSON; file paths are only used by the CLI.
struct StageConfig {
  Stage stage = Stage::kTextPretrain;
  std::size_t epochs = 1;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double temperature = 0.02;
  Reduction reduction = Reduction::kMean;
  std::uint64_t seed = 0;
  /// Roles: "captions" (t1, t2), "querydoc" (t2), "images" (image).
  std::map<std::string, DatasetRef> inputs;
  std::string warm_start;
  /// Run directory for artifacts; not part of the config hash.
  std::string out;
  std::optional<LoraConfig> lora;
  bool recycle_smaller = false;
  ProjectionOptions model;

  void validate() const;
};

/// Stage defaults: 1 epoch for t1, 3 for t2 and image; LoRA 16/16/0.1 for image.
StageConfig default_stage_config(Stage stage);

Json to_json(const StageConfig& cfg);
/// Strict: unknown keys and wrong types are errors. Missing keys keep the
/// stage defaults.
StageConfig stage_config_from_json(const Json& j);
/// Fingerprint of everything that influences the trained weights.
std::string config_hash(const StageConfig& cfg);

struct TrainReport {
  Stage stage = Stage::kTextPretrain;
  double initial_loss = 0.0;  // epoch-0 schedule evaluated before any update
  std::vector<double> epoch_losses;
  std::vector<std::size_t> batches_per_epoch;
  std::vector<std::size_t> unused_pairs_per_epoch;
  std::size_t steps = 0;
  std::string checkpoint;  // relative to the run directory
  double wall_time_seconds = 0.0;
  std::vector<std::uint64_t> rng_lineage;
  std::string config_hash;
};

/// Timing is split out so that reports from identical runs compare equal.
Json to_json(const TrainReport& report, bool include_timing = false);

/// Pair rows resolved against their matrices.
struct TrainingPairs {
  const EmbeddingMatrix* source = nullptr;
  const EmbeddingMatrix* target = nullptr;
  IndexedPairs pairs;
};

TrainingPairs make_training_pairs(const EmbeddingMatrix& source, const EmbeddingMatrix& target,
                                  const PairDataset& pairs);

struct StageResult {
  TrainReport report;
  Checkpoint checkpoint;
  AdamWState optimizer;
};

/// Invoked with (epoch, batch) before every optimizer step.
using BatchObserver = std::function<void(std::size_t, const Batch&)>;

/// Stage T1: fresh projection trained on caption pairs with the one-way loss
/// info_nce(phi(w), d_bar); both embedding sides are constants.
StageResult stage_text_pretrain(const TrainingPairs& captions, const StageConfig& cfg,
                                const BatchObserver& observer = {});

/// Stage T2: continues a T1 checkpoint on batches that hold batch_size/2
/// query-document pairs and batch_size/2 caption pairs.
StageResult stage_text_finetune(const TrainingPairs& querydoc, const TrainingPairs& captions,
                                const Checkpoint& warm_start, const StageConfig& cfg,
                                const BatchObserver& observer = {});

/// Stage I: base weights frozen, fresh zero-init adapters trained with the
/// symmetric loss between phi(v) and the LLM-side caption embedding.
StageResult stage_image_adapt(const TrainingPairs& images, const Checkpoint& warm_start, const StageConfig& cfg,
                              const BatchObserver& observer = {});

}  // namespace mate
