// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "mate/retrieval.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

#include "mate/parallel.hpp"

namespace mate {

namespace {

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

bool better(const Hit& a, const Hit& b) {
  if (a.similarity != b.similarity) return a.similarity > b.similarity;
  return a.gallery_index < b.gallery_index;
}

/// Top-k of `scores` (index = gallery row), skipping `exclude` if in range.
std::vector<Hit> best_k(const std::vector<double>& scores, std::size_t k, std::size_t exclude) {
  std::vector<Hit> all;
  all.reserve(scores.size());
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j != exclude) all.push_back({j, scores[j]});
  }
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

void check_ks(std::span<const std::size_t> ks, const RankingResult& ranking, const Positives& positives) {
  if (ks.empty()) throw Error("no K values given");
  for (auto k : ks) {
    if (k == 0) throw Error("K must be >= 1");
    if (k > ranking.k && ranking.k < ranking.gallery_size) {
      throw Error("ranking holds " + std::to_string(ranking.k) + " hits per query, K=" + std::to_string(k) +
                  " requested");
    }
  }
  if (positives.size() != ranking.hits.size()) throw Error("positives and ranking cover different query counts");
}

EvalReport report_shell(const char* metric, const RankingResult& ranking, std::span<const std::size_t> ks) {
  EvalReport r;
  r.metric = metric;
  r.direction = ranking.query_tag + "->" + ranking.gallery_tag;
  r.ks.assign(ks.begin(), ks.end());
  r.scores.assign(ks.size(), 0.0);
  r.notes = ranking.notes;
  return r;
}

}  // namespace

RankingResult topk(const EmbeddingMatrix& queries, const EmbeddingMatrix& gallery, std::size_t k, unsigned threads) {
  if (!queries.normalized() || !gallery.normalized()) throw Error("topk requires normalized embeddings");
  if (queries.dim() != gallery.dim()) {
    throw Error("topk dim mismatch: queries " + std::to_string(queries.dim()) + ", gallery " +
                std::to_string(gallery.dim()));
  }
  if (k == 0) throw Error("K must be >= 1");
  RankingResult out;
  out.query_tag = queries.source_tag();
  out.gallery_tag = gallery.source_tag();
  out.gallery_size = gallery.rows();
  if (k > gallery.rows()) {
    out.notes.push_back("K=" + std::to_string(k) + " clamped to gallery size " + std::to_string(gallery.rows()));
    k = gallery.rows();
  }
  out.k = k;
  out.hits.resize(queries.rows());
  parallel_for(queries.rows(), threads, [&](std::size_t q) {
    std::vector<double> scores(gallery.rows());
    const auto qrow = queries.row(q);
    for (std::size_t g = 0; g < gallery.rows(); ++g) scores[g] = dot(qrow, gallery.row(g));
    out.hits[q] = best_k(scores, k, gallery.rows());
  });
  return out;
}

Positives positives_from_pairs(const PairDataset& pairs, const EmbeddingMatrix& queries,
                               const EmbeddingMatrix& gallery, bool reverse) {
  Positives out(queries.rows());
  const auto& q_ids = reverse ? pairs.target_ids : pairs.source_ids;
  const auto& g_ids = reverse ? pairs.source_ids : pairs.target_ids;
  for (std::size_t i = 0; i < q_ids.size(); ++i) {
    if (!queries.contains(q_ids[i]) || !gallery.contains(g_ids[i])) continue;
    out[queries.index_of(q_ids[i])].push_back(gallery.index_of(g_ids[i]));
  }
  for (auto& p : out) {
    std::sort(p.begin(), p.end());
    p.erase(std::unique(p.begin(), p.end()), p.end());
  }
  return out;
}

EvalReport recall_at_k(const RankingResult& ranking, const Positives& positives, std::span<const std::size_t> ks) {
  check_ks(ks, ranking, positives);
  EvalReport r = report_shell("recall", ranking, ks);
  for (std::size_t q = 0; q < positives.size(); ++q) {
    if (positives[q].empty()) {
      ++r.num_excluded;
      continue;
    }
    ++r.num_queries;
    // Rank (0-based) of the first relevant hit.
    std::size_t first = ranking.hits[q].size();
    for (std::size_t i = 0; i < ranking.hits[q].size(); ++i) {
      if (std::binary_search(positives[q].begin(), positives[q].end(), ranking.hits[q][i].gallery_index)) {
        first = i;
        break;
      }
    }
    for (std::size_t j = 0; j < ks.size(); ++j) {
      if (first < ks[j]) r.scores[j] += 1.0;
    }
  }
  if (r.num_queries > 0) {
    for (auto& s : r.scores) s /= static_cast<double>(r.num_queries);
  }
  if (r.num_excluded > 0) r.notes.push_back(std::to_string(r.num_excluded) + " queries without positives excluded");
  return r;
}

EvalReport map_at_k(const RankingResult& ranking, const Positives& positives, std::span<const std::size_t> ks) {
  check_ks(ks, ranking, positives);
  EvalReport r = report_shell("map", ranking, ks);
  for (std::size_t q = 0; q < positives.size(); ++q) {
    const auto& pos = positives[q];
    if (pos.empty()) {
      ++r.num_excluded;
      continue;
    }
    ++r.num_queries;
    const auto& hits = ranking.hits[q];
    for (std::size_t j = 0; j < ks.size(); ++j) {
      const std::size_t k = ks[j];
      const std::size_t depth = std::min(k, hits.size());
      double sum = 0.0;
      std::size_t relevant = 0;
      for (std::size_t i = 0; i < depth; ++i) {
        if (std::binary_search(pos.begin(), pos.end(), hits[i].gallery_index)) {
          ++relevant;
          sum += static_cast<double>(relevant) / static_cast<double>(i + 1);
        }
      }
      r.scores[j] += sum / static_cast<double>(std::min(pos.size(), k));
    }
  }
  if (r.num_queries > 0) {
    for (auto& s : r.scores) s /= static_cast<double>(r.num_queries);
  }
  if (r.num_excluded > 0) r.notes.push_back(std::to_string(r.num_excluded) + " queries without positives excluded");
  return r;
}

double alignment_score(const EmbeddingMatrix& space_a, const EmbeddingMatrix& space_b, std::size_t k,
                       unsigned threads) {
  const std::size_t n = space_a.rows();
  if (space_b.rows() != n) throw Error("alignment_score: row counts differ");
  if (n <= k) throw Error("alignment_score: need N > k (N=" + std::to_string(n) + ", k=" + std::to_string(k) + ")");
  if (k == 0) throw Error("alignment_score: k must be >= 1");
  if (!space_a.normalized() || !space_b.normalized()) throw Error("alignment_score requires normalized embeddings");

  std::vector<std::size_t> b_row(n);
  const bool by_id = std::all_of(space_a.ids().begin(), space_a.ids().end(),
                                 [&](const std::string& id) { return space_b.contains(id); });
  for (std::size_t i = 0; i < n; ++i) b_row[i] = by_id ? space_b.index_of(space_a.id(i)) : i;

  std::vector<double> overlap(n, 0.0);
  parallel_for(n, threads, [&](std::size_t i) {
    std::vector<double> sa(n), sb(n);
    for (std::size_t j = 0; j < n; ++j) {
      sa[j] = dot(space_a.row(i), space_a.row(j));
      sb[j] = dot(space_b.row(b_row[i]), space_b.row(b_row[j]));
    }
    auto na = best_k(sa, k, i);
    auto nb = best_k(sb, k, i);
    std::vector<std::size_t> ia, ib;
    for (const auto& h : na) ia.push_back(h.gallery_index);
    for (const auto& h : nb) ib.push_back(h.gallery_index);
    std::sort(ia.begin(), ia.end());
    std::sort(ib.begin(), ib.end());
    std::vector<std::size_t> common;
    std::set_intersection(ia.begin(), ia.end(), ib.begin(), ib.end(), std::back_inserter(common));
    overlap[i] = static_cast<double>(common.size()) / static_cast<double>(k);
  });
  return std::accumulate(overlap.begin(), overlap.end(), 0.0) / static_cast<double>(n);
}

}  // namespace mate
