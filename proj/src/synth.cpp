// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "mate/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "mate/parallel.hpp"
#include "mate/rng.hpp"

namespace mate {

namespace {

constexpr std::uint64_t kStreamMaps = 1;
constexpr std::uint64_t kStreamCentres = 2;
constexpr std::uint64_t kStreamItems = 3;
constexpr std::uint64_t kStreamSideB = 4;
constexpr std::uint64_t kStreamSplit = 5;
constexpr int kMaxRetries = 8;

struct SideMap {
  MapKind kind = MapKind::kLinear;
  Matrix first;   // k x latent
  Matrix second;  // k x k (mlp only)

  Vector apply(const Vector& z) const {
    switch (kind) {
      case MapKind::kIdentity:
        return z;
      case MapKind::kOrthogonal:
      case MapKind::kLinear:
        return first * z;
      case MapKind::kMlp:
        return second * (first * z).array().tanh().matrix();
    }
    return z;
  }
};

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Vector gaussian_vec(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = dist(rng);
  return v;
}

SideMap make_map(MapKind kind, std::uint32_t latent, std::uint32_t k, std::uint64_t seed) {
  Rng rng(seed);
  SideMap m;
  m.kind = kind;
  switch (kind) {
    case MapKind::kIdentity:
      break;
    case MapKind::kOrthogonal: {
      const Matrix g = gaussian(k, latent, 1.0, rng);
      Eigen::HouseholderQR<Matrix> qr(g);
      m.first = qr.householderQ() * Matrix::Identity(k, latent);
      break;
    }
    case MapKind::kLinear:
      m.first = gaussian(k, latent, 1.0 / std::sqrt(static_cast<double>(latent)), rng);
      break;
    case MapKind::kMlp:
      m.first = gaussian(k, latent, 1.0 / std::sqrt(static_cast<double>(latent)), rng);
      m.second = gaussian(k, k, 1.0 / std::sqrt(static_cast<double>(k)), rng);
      break;
  }
  return m;
}

/// normalize(normalize(f(z)) + noise * e / sqrt(k)), redrawing with jitter on degeneracy.
Vector embed(const SideMap& map, Vector z, double noise, Rng& rng, const char* what, std::size_t item) {
  for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
    Vector s = map.apply(z);
    const double sn = s.norm();
    if (sn > kZeroNormEpsilon) {
      s /= sn;
      if (noise > 0.0) s += noise / std::sqrt(static_cast<double>(s.size())) * gaussian_vec(s.size(), rng);
      const double rn = s.norm();
      if (rn > kZeroNormEpsilon && s.allFinite()) return s / rn;
    }
    z += 1e-6 * gaussian_vec(z.size(), rng);
  }
  throw Error(std::string("synth: degenerate zero-norm ") + what + " row for item " + std::to_string(item));
}

std::string make_id(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%06zu", prefix, i);
  return buf;
}

EmbeddingMatrix to_embedding(std::vector<std::string> ids, const Matrix& rows, const char* tag) {
  return EmbeddingMatrix::from_rows(std::move(ids), rows, tag, true);
}

}  // namespace

std::string_view to_string(MapKind kind) {
  switch (kind) {
    case MapKind::kIdentity:
      return "identity";
    case MapKind::kOrthogonal:
      return "orthogonal";
    case MapKind::kLinear:
      return "linear";
    case MapKind::kMlp:
      return "mlp";
  }
  return "unknown";
}

MapKind parse_map_kind(std::string_view text) {
  for (auto k : {MapKind::kIdentity, MapKind::kOrthogonal, MapKind::kLinear, MapKind::kMlp}) {
    if (to_string(k) == text) return k;
  }
  throw Error("unknown map kind '" + std::string(text) + "'");
}

void SynthSpec::validate() const {
  if (n_items == 0 || latent_dim == 0 || k_a == 0 || k_b == 0) throw Error("synth: all dims must be positive");
  if (!(noise_a >= 0.0) || !(noise_b >= 0.0)) throw Error("synth: noise_sigma must be >= 0");
  for (auto [kind, k] : {std::pair{map_a, k_a}, std::pair{map_b, k_b}}) {
    if (kind == MapKind::kIdentity && k != latent_dim) throw Error("synth: identity map requires k == latent_dim");
    if (kind == MapKind::kOrthogonal && k < latent_dim) throw Error("synth: orthogonal map requires k >= latent_dim");
  }
  if (long_text_mode) {
    if (cluster_size == 0) throw Error("synth: cluster_size must be >= 1");
    if (cluster_size > n_items) throw Error("synth: cluster_size exceeds n_items");
    if (!(cluster_spread >= 0.0)) throw Error("synth: cluster_spread must be >= 0");
  }
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw Error("synth: test_fraction must lie in (0, 1)");
}

SynthArtifacts generate(const SynthSpec& spec, unsigned threads) {
  spec.validate();
  const std::size_t n = spec.n_items;
  const std::size_t n_b = spec.long_text_mode ? n / spec.cluster_size : n;
  std::vector<std::size_t> group(n);
  for (std::size_t i = 0; i < n; ++i) {
    group[i] = spec.long_text_mode ? std::min(i / spec.cluster_size, n_b - 1) : i;
  }

  const auto map_a = make_map(spec.map_a, spec.latent_dim, spec.k_a, derive_seed(spec.seed, {kStreamMaps, 0}));
  const auto map_b = make_map(spec.map_b, spec.latent_dim, spec.k_b, derive_seed(spec.seed, {kStreamMaps, 1}));

  std::vector<Vector> centres;
  if (spec.long_text_mode) {
    centres.resize(n_b);
    parallel_for(n_b, threads, [&](std::size_t j) {
      Rng rng(derive_seed(spec.seed, {kStreamCentres, j}));
      centres[j] = gaussian_vec(spec.latent_dim, rng);
    });
  }

  std::vector<Vector> latents(n);
  Matrix rows_a(static_cast<Eigen::Index>(n), spec.k_a);
  parallel_for(n, threads, [&](std::size_t i) {
    Rng rng(derive_seed(spec.seed, {kStreamItems, i}));
    Vector z = gaussian_vec(spec.latent_dim, rng);
    if (spec.long_text_mode) z = centres[group[i]] + spec.cluster_spread * z;
    latents[i] = z;
    rows_a.row(static_cast<Eigen::Index>(i)) = embed(map_a, z, spec.noise_a, rng, "side-A", i).transpose();
  });

  std::vector<std::vector<std::size_t>> members(n_b);
  for (std::size_t i = 0; i < n; ++i) members[group[i]].push_back(i);

  Matrix rows_b(static_cast<Eigen::Index>(n_b), spec.k_b);
  parallel_for(n_b, threads, [&](std::size_t j) {
    Rng rng(derive_seed(spec.seed, {kStreamSideB, j}));
    Vector centroid = Vector::Zero(spec.latent_dim);
    for (auto i : members[j]) centroid += latents[i];
    centroid /= static_cast<double>(members[j].size());
    rows_b.row(static_cast<Eigen::Index>(j)) = embed(map_b, centroid, spec.noise_b, rng, "side-B", j).transpose();
  });

  std::vector<std::string> ids_a(n), ids_b(n_b);
  for (std::size_t i = 0; i < n; ++i) ids_a[i] = make_id('a', i);
  for (std::size_t j = 0; j < n_b; ++j) ids_b[j] = make_id('b', j);

  SynthArtifacts out;
  out.side_a = to_embedding(ids_a, rows_a, "vlm");
  out.side_b = to_embedding(ids_b, rows_b, "llm");

  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n_b) * spec.test_fraction));
  if (n_test == 0 || n_test >= n_b) throw Error("synth: test split would be empty or cover every row");
  std::vector<std::size_t> perm(n_b);
  std::iota(perm.begin(), perm.end(), 0);
  Rng split_rng(derive_seed(spec.seed, {kStreamSplit}));
  std::shuffle(perm.begin(), perm.end(), split_rng);
  out.test_b_rows.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  out.train_b_rows.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
  std::sort(out.test_b_rows.begin(), out.test_b_rows.end());
  std::sort(out.train_b_rows.begin(), out.train_b_rows.end());

  out.train_pairs.kind = PairKind::kImageCaption;
  out.test_pairs.kind = PairKind::kImageCaption;
  out.eval_a_to_b.kind = PairKind::kEvalMultipositive;
  out.eval_b_to_a.kind = PairKind::kEvalMultipositive;
  for (auto j : out.train_b_rows) {
    for (auto i : members[j]) {
      out.train_a_rows.push_back(i);
      out.train_pairs.source_ids.push_back(ids_a[i]);
      out.train_pairs.target_ids.push_back(ids_b[j]);
    }
  }
  for (auto j : out.test_b_rows) {
    std::vector<std::string> pos;
    for (auto i : members[j]) {
      out.test_a_rows.push_back(i);
      out.test_pairs.source_ids.push_back(ids_a[i]);
      out.test_pairs.target_ids.push_back(ids_b[j]);
      out.eval_a_to_b.positives.push_back({ids_a[i], {ids_b[j]}});
      out.eval_a_to_b.source_ids.push_back(ids_a[i]);
      out.eval_a_to_b.target_ids.push_back(ids_b[j]);
      out.eval_b_to_a.source_ids.push_back(ids_b[j]);
      out.eval_b_to_a.target_ids.push_back(ids_a[i]);
      pos.push_back(ids_a[i]);
    }
    out.eval_b_to_a.positives.emplace_back(ids_b[j], std::move(pos));
  }
  return out;
}

EmbeddingMatrix project_embeddings(const Checkpoint& checkpoint, const EmbeddingMatrix& matrix,
                                   std::string source_tag) {
  Matrix out = project(checkpoint.params, checkpoint.adapter_ptr(), matrix.to_matrix());
  if (!checkpoint.params.options.output_normalize) out.rowwise().normalize();
  return normalize_rows(EmbeddingMatrix::from_rows(matrix.ids(), out, std::move(source_tag), false));
}

std::vector<EvalReport> oracle_eval(const Checkpoint& checkpoint, const SynthArtifacts& synth,
                                    std::span<const std::size_t> ks, unsigned threads) {
  if (ks.empty()) throw Error("oracle_eval: no K values given");
  const auto queries_raw = synth.side_a.subset(synth.test_a_rows);
  const auto gallery = synth.side_b.subset(synth.test_b_rows);
  const auto queries = project_embeddings(checkpoint, queries_raw, "vlm-projected");
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());

  std::vector<EvalReport> reports;
  const auto a2b = topk(queries, gallery, kmax, threads);
  const auto pos_a2b = positives_from_pairs(synth.eval_a_to_b, queries, gallery, false);
  reports.push_back(recall_at_k(a2b, pos_a2b, ks));
  reports.push_back(map_at_k(a2b, pos_a2b, ks));
  const auto b2a = topk(gallery, queries, kmax, threads);
  const auto pos_b2a = positives_from_pairs(synth.eval_b_to_a, gallery, queries, false);
  reports.push_back(recall_at_k(b2a, pos_b2a, ks));
  reports.push_back(map_at_k(b2a, pos_b2a, ks));
  return reports;
}

}  // namespace mate
