// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mate/embed_store.hpp"

namespace mate {

struct Hit {
  std::size_t gallery_index = 0;
  double similarity = 0.0;
};

/// Per query, the K best gallery rows by cosine, best first; ties resolved
/// toward the lower gallery index.
struct RankingResult {
  std::vector<std::vector<Hit>> hits;
  std::size_t k = 0;
  std::size_t gallery_size = 0;
  std::string query_tag;
  std::string gallery_tag;
  std::vector<std::string> notes;
};

/// Exact top-K cosine search. Both inputs must be normalized and share a
/// dimension. K larger than the gallery is clamped and noted.
RankingResult topk(const EmbeddingMatrix& queries, const EmbeddingMatrix& gallery, std::size_t k,
                   unsigned threads = 1);

/// Gallery row indices relevant to each query, in query-row order.
using Positives = std::vector<std::vector<std::size_t>>;

/// Positives for `queries` against `gallery` from a pair dataset whose source
/// side names query ids (or gallery ids when `reverse`). Queries the dataset
/// never mentions get an empty set.
Positives positives_from_pairs(const PairDataset& pairs, const EmbeddingMatrix& queries,
                               const EmbeddingMatrix& gallery, bool reverse);

struct EvalReport {
  std::string metric;  // "recall" or "map"
  std::string direction;
  std::vector<std::size_t> ks;
  std::vector<double> scores;
  std::size_t num_queries = 0;   // queries that contributed
  std::size_t num_excluded = 0;  // queries without any positive
  std::vector<std::string> notes;
};

/// Fraction of queries with at least one positive among the first K hits.
EvalReport recall_at_k(const RankingResult& ranking, const Positives& positives, std::span<const std::size_t> ks);

/// Mean over queries of AP@K = (1 / min(|P|, K)) * sum_{i<=K} Precision(i) rel(i).
/// Queries with an empty positive set are excluded and counted.
EvalReport map_at_k(const RankingResult& ranking, const Positives& positives, std::span<const std::size_t> ks);

/// Mutual k-nearest-neighbour overlap between two representations of the
/// same N items: mean over items of |kNN_a(i) & kNN_b(i)| / k, cosine
/// neighbours, self excluded. Rows of `space_b` are matched to `space_a` by
/// id when every id of `space_a` appears in `space_b`, by position otherwise.
double alignment_score(const EmbeddingMatrix& space_a, const EmbeddingMatrix& space_b, std::size_t k,
                       unsigned threads = 1);

}  // namespace mate
