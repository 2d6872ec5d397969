// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mate/checkpoint.hpp"
#include "mate/embed_store.hpp"
#include "mate/retrieval.hpp"

namespace mate {

enum class MapKind { kIdentity, kOrthogonal, kLinear, kMlp };

std::string_view to_string(MapKind kind);
MapKind parse_map_kind(std::string_view text);

/// Paired embedding spaces generated from shared Gaussian latents.
///
/// Side A plays the VLM role (dim k_a), side B the LLM role (dim k_b). Each
/// side is normalize(normalize(f(z)) + noise * e / sqrt(k)), so `noise` is a
/// noise-to-signal norm ratio. In long-text mode the latents come in clusters
/// of `cluster_size` around a random centre and side B holds one row per
/// cluster, built from the cluster's mean latent: one document, many images.
struct SynthSpec {
  std::size_t n_items = 1000;
  std::uint32_t latent_dim = 32;
  std::uint32_t k_a = 64;
  std::uint32_t k_b = 128;
  MapKind map_a = MapKind::kLinear;
  MapKind map_b = MapKind::kLinear;
  double noise_a = 0.0;
  double noise_b = 0.0;
  std::uint64_t seed = 0;
  bool long_text_mode = false;
  std::size_t cluster_size = 5;
  /// Std of member latents around their cluster centre (long-text mode).
  double cluster_spread = 0.35;
  /// Fraction of side-B rows (with all their side-A partners) held out.
  double test_fraction = 0.1;

  void validate() const;
};

struct SynthArtifacts {
  EmbeddingMatrix side_a;
  EmbeddingMatrix side_b;
  /// One-to-one (image-caption) edges a -> b, split by side-B row.
  PairDataset train_pairs;
  PairDataset test_pairs;
  /// Held-out ground truth as multipositive maps in both directions.
  PairDataset eval_a_to_b;
  PairDataset eval_b_to_a;
  std::vector<std::size_t> train_a_rows;
  std::vector<std::size_t> test_a_rows;
  std::vector<std::size_t> train_b_rows;
  std::vector<std::size_t> test_b_rows;
};

/// Deterministic in `spec.seed`; every item draws from its own counter-based
/// stream so the result does not depend on `threads`.
SynthArtifacts generate(const SynthSpec& spec, unsigned threads = 1);

/// Projects held-out side-A rows through the checkpoint (adapters included,
/// eval mode) and scores retrieval against the held-out side-B gallery.
/// Returns recall and mAP reports for both directions: a->b then b->a.
std::vector<EvalReport> oracle_eval(const Checkpoint& checkpoint, const SynthArtifacts& synth,
                                    std::span<const std::size_t> ks, unsigned threads = 1);

/// Applies the projection to every row of `matrix` and re-normalizes.
EmbeddingMatrix project_embeddings(const Checkpoint& checkpoint, const EmbeddingMatrix& matrix,
                                   std::string source_tag);

}  // namespace mate
